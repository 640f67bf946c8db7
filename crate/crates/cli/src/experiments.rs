//! Experiment orchestration: corpus loading, corruption, model training,
//! baseline filters, evaluation, and the table reproduction bundles.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use denoise_core::baselines::{median_filter, nl_means, BaselineError, NlMeansConfig};
use denoise_core::io::{
    load_checkpoint, make_splits, pgm, png_io, resize_bilinear, save_checkpoint, synth_corpus,
    DataError, DatasetManifest, DatasetTag, ManifestEntry, SplitMode,
};
use denoise_core::metrics::{psnr, ssim, MetricsError, SsimConfig};
use denoise_core::network::{default_architecture, forward, LayerSpec, NetworkError};
use denoise_core::noise::{corrupt, preset_by_index, NoiseError, NoiseSpec};
use denoise_core::rng::{shuffle, Stream};
use denoise_core::tensor::{
    images_to_tensor, tensor_to_images, ConvWeights, Image, TensorError,
};
use denoise_core::training::{
    train_with_progress, write_history_csv, TrainConfig, TrainError, TrainHistory,
};

use crate::config::{hash_of, CorpusSource, ExperimentConfig, NoiseSelection};
use crate::plot;
use crate::report::{montage, ResultsReport};

pub const IMAGE_SIDE: usize = 64;
const INFER_BATCH: usize = 10;
const SALT_SUBSET: u64 = 0x73756273;

pub const METHOD_NOISY: &str = "noisy";
pub const METHOD_MEDIAN: &str = "median";
pub const METHOD_NL_MEANS: &str = "nl_means";
pub const METHOD_DAE: &str = "cnn_dae";
pub const METHOD_DAE_SMALL: &str = "cnn_dae_a";
pub const METHOD_DAE_COMBINED: &str = "cnn_dae_b";

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error("stage {stage}: {source}")]
    Stage {
        stage: String,
        source: Box<ExperimentError>,
    },
}

impl ExperimentError {
    /// Process exit code: 2 for configuration problems, 3 for data problems,
    /// 4 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_)
            | ExperimentError::Noise(_)
            | ExperimentError::Baseline(_)
            | ExperimentError::Metrics(_)
            | ExperimentError::Train(TrainError::BadConfig { .. }) => 2,
            ExperimentError::Data(_) | ExperimentError::Io(_) | ExperimentError::Tensor(_) => 3,
            ExperimentError::Train(_) | ExperimentError::Network(_) => 4,
            ExperimentError::Stage { source, .. } => source.exit_code(),
        }
    }
}

fn stage<T>(name: &str, result: Result<T, ExperimentError>) -> Result<T, ExperimentError> {
    result.map_err(|e| ExperimentError::Stage {
        stage: name.to_string(),
        source: Box::new(e),
    })
}

/// A corpus normalized for the pipeline: grayscale images resized to
/// 64x64 in [0,1], with stable unique ids and dataset tags.
pub struct LoadedCorpus {
    pub images: Vec<Image<f32>>,
    pub ids: Vec<String>,
    pub manifest: DatasetManifest,
    pub note: String,
    pub synthetic: bool,
}

impl LoadedCorpus {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

fn uniquify(ids: Vec<String>) -> Vec<String> {
    let mut seen: Vec<String> = Vec::new();
    let mut out = Vec::with_capacity(ids.len());
    for (i, id) in ids.into_iter().enumerate() {
        let unique = if seen.contains(&id) {
            format!("{id}_{i}")
        } else {
            id
        };
        seen.push(unique.clone());
        out.push(unique);
    }
    out
}

fn image_files_under(root: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    let mut paths = Vec::new();
    for entry in std::fs::read_dir(root)? {
        let path = entry?.path();
        let ext = path
            .extension()
            .map(|e| e.to_string_lossy().to_lowercase())
            .unwrap_or_default();
        if path.is_file() && (ext == "pgm" || ext == "png") {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

fn load_image_files(
    paths: &[(PathBuf, DatasetTag)],
) -> Result<(Vec<Image<f32>>, Vec<String>), ExperimentError> {
    let mut images = Vec::with_capacity(paths.len());
    let mut ids = Vec::with_capacity(paths.len());
    for (path, _) in paths {
        let img = denoise_core::io::load_grayscale(path)?;
        images.push(resize_bilinear(&img, IMAGE_SIDE, IMAGE_SIDE));
        ids.push(
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "image".into()),
        );
    }
    Ok((images, uniquify(ids)))
}

/// Loads a corpus from its source, resizing every image to 64x64.
pub fn load_corpus(source: &CorpusSource, seed: u64) -> Result<LoadedCorpus, ExperimentError> {
    match source {
        CorpusSource::Synthetic { count } => {
            if *count == 0 {
                return Err(ExperimentError::Config(
                    "synthetic corpus count must be at least 1".into(),
                ));
            }
            let images = synth_corpus(*count, seed);
            let ids: Vec<String> = (0..*count).map(|i| format!("synth_{i:04}")).collect();
            let entries = ids
                .iter()
                .map(|id| ManifestEntry {
                    path: PathBuf::from(format!("{id}.pgm")),
                    tag: DatasetTag::Other,
                })
                .collect();
            Ok(LoadedCorpus {
                images,
                ids,
                manifest: DatasetManifest::new(entries),
                note: format!("synthetic corpus of {count} images (seed {seed})"),
                synthetic: true,
            })
        }
        CorpusSource::Directory { root } => {
            let files = image_files_under(root)?;
            if files.is_empty() {
                return Err(DataError::InsufficientImages {
                    what: format!("image directory {}", root.display()),
                    required: 1,
                    available: 0,
                }
                .into());
            }
            let tagged: Vec<(PathBuf, DatasetTag)> = files
                .into_iter()
                .map(|p| (p, DatasetTag::Other))
                .collect();
            let (images, ids) = load_image_files(&tagged)?;
            let entries = tagged
                .into_iter()
                .map(|(path, tag)| ManifestEntry { path, tag })
                .collect();
            Ok(LoadedCorpus {
                note: format!("directory corpus of {} images under {}", ids.len(), root.display()),
                images,
                ids,
                manifest: DatasetManifest::new(entries),
                synthetic: false,
            })
        }
        CorpusSource::Manifest { path } => {
            let manifest = DatasetManifest::read_from(path)?;
            if manifest.is_empty() {
                return Err(DataError::InsufficientImages {
                    what: format!("manifest {}", path.display()),
                    required: 1,
                    available: 0,
                }
                .into());
            }
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            let tagged: Vec<(PathBuf, DatasetTag)> = manifest
                .entries
                .iter()
                .map(|e| {
                    let p = if e.path.is_absolute() {
                        e.path.clone()
                    } else {
                        base.join(&e.path)
                    };
                    (p, e.tag)
                })
                .collect();
            let (images, ids) = load_image_files(&tagged)?;
            Ok(LoadedCorpus {
                note: format!("manifest corpus of {} images from {}", ids.len(), path.display()),
                images,
                ids,
                manifest,
                synthetic: false,
            })
        }
    }
}

/// Applies the noise spec to the whole corpus as one dataset tensor, so
/// per-pixel noise streams are independent of any later subsetting.
pub fn corrupt_images(
    images: &[Image<f32>],
    spec: &NoiseSpec,
    seed: u64,
) -> Result<Vec<Image<f32>>, ExperimentError> {
    let tensor = images_to_tensor(images)?;
    let noisy = corrupt(&tensor, spec, seed)?;
    Ok(tensor_to_images(&noisy)?)
}

/// Runs the network over the images in fixed-size batches.
pub fn run_model(
    params: &[ConvWeights<f32>],
    spec: &[LayerSpec],
    images: &[Image<f32>],
) -> Result<Vec<Image<f32>>, ExperimentError> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(INFER_BATCH) {
        let batch = images_to_tensor(chunk)?;
        let (reconstruction, _) = forward(params, spec, &batch)?;
        out.extend(tensor_to_images(&reconstruction)?);
    }
    Ok(out)
}

pub fn apply_median(images: &[Image<f32>], k: usize) -> Result<Vec<Image<f32>>, ExperimentError> {
    images
        .par_iter()
        .map(|img| median_filter(img, k).map_err(ExperimentError::from))
        .collect()
}

pub fn apply_nl_means(
    images: &[Image<f32>],
    cfg: &NlMeansConfig,
) -> Result<Vec<Image<f32>>, ExperimentError> {
    images
        .par_iter()
        .map(|img| nl_means(img, cfg).map_err(ExperimentError::from))
        .collect()
}

fn select<T: Clone>(items: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| items[i].clone()).collect()
}

/// Scores one processed set against the clean set, appends per-image rows
/// to the report, and returns the mean SSIM.
pub fn evaluate_method(
    report: &mut ResultsReport,
    clean: &[Image<f32>],
    processed: &[Image<f32>],
    ids: &[String],
    method: &str,
    noise_id: &str,
    metric: &SsimConfig,
) -> Result<f64, ExperimentError> {
    if clean.len() != processed.len() || clean.len() != ids.len() {
        return Err(DataError::InsufficientImages {
            what: format!("aligned evaluation sets for {method}"),
            required: clean.len(),
            available: processed.len().min(ids.len()),
        }
        .into());
    }
    if clean.is_empty() {
        return Err(ExperimentError::Config("empty evaluation set".into()));
    }
    let scored: Vec<(f64, denoise_core::metrics::Psnr)> = clean
        .par_iter()
        .zip(processed)
        .map(|(c, p)| {
            let s = ssim(c, p, metric)?;
            let q = psnr(c, p, metric.dynamic_range)?;
            Ok((s, q))
        })
        .collect::<Result<_, MetricsError>>()?;
    for ((s, q), id) in scored.iter().zip(ids) {
        report.push(id, method, noise_id, *s, *q);
    }
    Ok(scored.iter().map(|(s, _)| s).sum::<f64>() / scored.len() as f64)
}

fn write_montage(
    path: &Path,
    rows: &[&[Image<f32>]],
    count: usize,
) -> Result<(), ExperimentError> {
    let cols = rows.iter().map(|r| r.len()).min().unwrap_or(0).min(count);
    if cols == 0 {
        return Ok(());
    }
    let grid: Vec<Vec<Image<f32>>> = rows.iter().map(|r| r[..cols].to_vec()).collect();
    png_io::write_gray8(&montage(&grid, 4), path)?;
    Ok(())
}

fn sanitize(label: &str) -> String {
    label
        .to_lowercase()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

pub struct TrainedModel {
    pub params: Vec<ConvWeights<f32>>,
    pub history: TrainHistory,
    pub checkpoint: PathBuf,
}

/// Trains the default architecture on (noisy, clean) pairs and writes the
/// checkpoint, history CSV, and loss curve SVG, suffixed with `name` when
/// one is given.
fn train_and_save(
    name: &str,
    noisy: &[Image<f32>],
    clean: &[Image<f32>],
    config: &TrainConfig,
    out_dir: &Path,
    progress: bool,
) -> Result<TrainedModel, ExperimentError> {
    let spec = default_architecture();
    let noisy_t = images_to_tensor(noisy)?;
    let clean_t = images_to_tensor(clean)?;
    let label = if name.is_empty() { "train" } else { name };
    let outcome = train_with_progress(&noisy_t, &clean_t, &spec, config, &mut |r| {
        if progress {
            match r.val_loss {
                Some(v) => eprintln!(
                    "[{label}] epoch {}/{}: train loss {:.6}, val loss {v:.6}",
                    r.epoch, r.epochs, r.train_loss
                ),
                None => eprintln!(
                    "[{label}] epoch {}/{}: train loss {:.6}",
                    r.epoch, r.epochs, r.train_loss
                ),
            }
        }
    })?;
    let suffix = if name.is_empty() {
        String::new()
    } else {
        format!("_{}", sanitize(name))
    };
    let checkpoint = out_dir.join(format!("model{suffix}.ckpt"));
    save_checkpoint(&outcome.params, &spec, &checkpoint)?;
    write_history_csv(&outcome.history, &out_dir.join(format!("history{suffix}.csv")))?;
    std::fs::write(
        out_dir.join(format!("loss{suffix}.svg")),
        plot::loss_chart(&outcome.history.train_loss, &outcome.history.val_loss),
    )?;
    Ok(TrainedModel {
        params: outcome.params,
        history: outcome.history,
        checkpoint,
    })
}

pub struct CorruptArgs {
    pub corpus: CorpusSource,
    pub noise: NoiseSelection,
    pub seed: u64,
    pub out_dir: PathBuf,
}

pub struct CorruptSummary {
    pub written: usize,
    pub out_dir: PathBuf,
    pub noise_id: String,
}

/// Writes a corrupted copy of every corpus image plus a manifest and a
/// provenance file naming the noise spec and seed. Reruns with the same
/// inputs produce identical bytes.
pub fn cmd_corrupt(args: &CorruptArgs) -> Result<CorruptSummary, ExperimentError> {
    let spec = args.noise.resolve().map_err(ExperimentError::Config)?;
    let corpus = stage("load-corpus", load_corpus(&args.corpus, args.seed))?;
    let noisy = stage("corrupt", corrupt_images(&corpus.images, &spec, args.seed))?;

    std::fs::create_dir_all(&args.out_dir)?;
    let mut entries = Vec::with_capacity(noisy.len());
    for (i, img) in noisy.iter().enumerate() {
        let file = format!("{}.pgm", corpus.ids[i]);
        std::fs::write(args.out_dir.join(&file), pgm::write_p5(img))?;
        entries.push(ManifestEntry {
            path: PathBuf::from(file),
            tag: corpus.manifest.entries[i].tag,
        });
    }
    DatasetManifest::new(entries).write_to(&args.out_dir.join("manifest.tsv"))?;

    #[derive(Serialize)]
    struct Provenance<'a> {
        schema_version: u32,
        noise: &'a NoiseSpec,
        noise_id: String,
        seed: u64,
        corpus: &'a str,
        images: usize,
    }
    let provenance = Provenance {
        schema_version: 1,
        noise: &spec,
        noise_id: spec.id(),
        seed: args.seed,
        corpus: &corpus.note,
        images: noisy.len(),
    };
    std::fs::write(
        args.out_dir.join("provenance.json"),
        serde_json::to_string_pretty(&provenance).expect("provenance serializes"),
    )?;
    Ok(CorruptSummary {
        written: noisy.len(),
        out_dir: args.out_dir.clone(),
        noise_id: spec.id(),
    })
}

pub struct TrainArgs {
    pub config: ExperimentConfig,
    pub progress: bool,
}

pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub split_note: String,
    pub train_images: usize,
    pub epochs: usize,
    pub final_train_loss: Option<f64>,
    pub config_hash: String,
}

/// Trains one model on the train split of the configured corpus and writes
/// checkpoint, history CSV, loss SVG, the resolved config, and split notes.
pub fn cmd_train(args: &TrainArgs) -> Result<TrainSummary, ExperimentError> {
    let config = &args.config;
    config.validate().map_err(ExperimentError::Config)?;
    let noise = config.noise.resolve().map_err(ExperimentError::Config)?;
    let train_config = TrainConfig {
        seed: config.seed,
        ..config.train
    };

    let corpus = stage("load-corpus", load_corpus(&config.corpus, config.seed))?;
    let plan = stage(
        "split",
        make_splits(&corpus.manifest, config.split, config.seed).map_err(ExperimentError::from),
    )?;
    let mut train_idx: Vec<usize> = plan.groups.iter().flat_map(|g| g.train.clone()).collect();
    train_idx.sort_unstable();
    let noisy_all = stage("corrupt", corrupt_images(&corpus.images, &noise, config.seed))?;

    std::fs::create_dir_all(&config.out_dir)?;
    std::fs::write(config.out_dir.join("config.json"), config.to_json())?;
    let trained = stage(
        "train",
        train_and_save(
            "",
            &select(&noisy_all, &train_idx),
            &select(&corpus.images, &train_idx),
            &train_config,
            &config.out_dir,
            args.progress,
        ),
    )?;

    #[derive(Serialize)]
    struct SplitRecord<'a> {
        mode: SplitMode,
        note: &'a str,
        groups: Vec<GroupRecord>,
    }
    #[derive(Serialize)]
    struct GroupRecord {
        label: String,
        train_ids: Vec<String>,
        test_ids: Vec<String>,
    }
    let record = SplitRecord {
        mode: config.split,
        note: &plan.note,
        groups: plan
            .groups
            .iter()
            .map(|g| GroupRecord {
                label: g.label.clone(),
                train_ids: g.train.iter().map(|&i| corpus.ids[i].clone()).collect(),
                test_ids: g.test.iter().map(|&i| corpus.ids[i].clone()).collect(),
            })
            .collect(),
    };
    std::fs::write(
        config.out_dir.join("split.json"),
        serde_json::to_string_pretty(&record).expect("split serializes"),
    )?;

    Ok(TrainSummary {
        checkpoint: trained.checkpoint,
        split_note: plan.note,
        train_images: train_idx.len(),
        epochs: trained.history.epochs(),
        final_train_loss: trained.history.final_train_loss(),
        config_hash: config.content_hash(),
    })
}

pub struct DenoiseArgs {
    pub checkpoint: PathBuf,
    pub corpus: CorpusSource,
    pub seed: u64,
    pub out_dir: PathBuf,
}

pub struct DenoiseSummary {
    pub written: usize,
    pub out_dir: PathBuf,
}

/// Restores a checkpoint and writes the reconstruction of every corpus
/// image. Deterministic: same checkpoint and corpus, same output bytes.
pub fn cmd_denoise(args: &DenoiseArgs) -> Result<DenoiseSummary, ExperimentError> {
    let (params, spec) = stage(
        "load-checkpoint",
        load_checkpoint(&args.checkpoint).map_err(ExperimentError::from),
    )?;
    let corpus = stage("load-corpus", load_corpus(&args.corpus, args.seed))?;
    let denoised = stage("denoise", run_model(&params, &spec, &corpus.images))?;
    std::fs::create_dir_all(&args.out_dir)?;
    for (img, id) in denoised.iter().zip(&corpus.ids) {
        std::fs::write(
            args.out_dir.join(format!("{id}_denoised.pgm")),
            pgm::write_p5(img),
        )?;
    }
    Ok(DenoiseSummary {
        written: denoised.len(),
        out_dir: args.out_dir.clone(),
    })
}

pub struct EvaluateArgs {
    pub clean: CorpusSource,
    /// (method name, directory of candidate images) pairs; each directory
    /// must hold exactly one image per clean image, matched after sorting
    /// by file name.
    pub candidates: Vec<(String, PathBuf)>,
    pub metric: SsimConfig,
    pub noise_label: String,
    pub seed: u64,
    pub out_dir: PathBuf,
}

pub struct EvaluateSummary {
    pub report: ResultsReport,
    pub per_image_csv: PathBuf,
    pub means_csv: PathBuf,
    pub montage_png: PathBuf,
}

/// Scores candidate sets against the clean corpus and writes per-image and
/// mean CSVs plus a comparison montage.
pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<EvaluateSummary, ExperimentError> {
    if args.candidates.len() < 2 {
        return Err(ExperimentError::Config(
            "evaluation needs at least two candidate sets".into(),
        ));
    }
    args.metric.validate()?;
    let clean = stage("load-corpus", load_corpus(&args.clean, args.seed))?;

    let hash = hash_of(&(
        "evaluate",
        &args.clean,
        &args
            .candidates
            .iter()
            .map(|(m, _)| m.clone())
            .collect::<Vec<_>>(),
        &args.metric,
        &args.noise_label,
    ));
    let mut report = ResultsReport::new(hash, args.seed);
    let mut montage_rows: Vec<Vec<Image<f32>>> = vec![clean.images.clone()];
    for (method, dir) in &args.candidates {
        let candidate = stage(
            &format!("load-{method}"),
            load_corpus(&CorpusSource::Directory { root: dir.clone() }, args.seed),
        )?;
        if candidate.len() != clean.len() {
            return Err(DataError::InsufficientImages {
                what: format!("candidate set {method} in {}", dir.display()),
                required: clean.len(),
                available: candidate.len(),
            }
            .into());
        }
        stage(
            &format!("evaluate-{method}"),
            evaluate_method(
                &mut report,
                &clean.images,
                &candidate.images,
                &clean.ids,
                method,
                &args.noise_label,
                &args.metric,
            )
            .map(|_| ()),
        )?;
        montage_rows.push(candidate.images);
    }

    std::fs::create_dir_all(&args.out_dir)?;
    let per_image_csv = args.out_dir.join("per_image.csv");
    let means_csv = args.out_dir.join("means.csv");
    let montage_png = args.out_dir.join("montage.png");
    std::fs::write(&per_image_csv, report.per_image_csv())?;
    std::fs::write(&means_csv, report.means_csv())?;
    let rows: Vec<&[Image<f32>]> = montage_rows.iter().map(|r| r.as_slice()).collect();
    write_montage(&montage_png, &rows, 6)?;
    Ok(EvaluateSummary {
        report,
        per_image_csv,
        means_csv,
        montage_png,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TableId {
    Two,
    Three,
    Four,
}

impl TableId {
    pub fn number(self) -> u32 {
        match self {
            TableId::Two => 2,
            TableId::Three => 3,
            TableId::Four => 4,
        }
    }
}

impl FromStr for TableId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "2" => Ok(TableId::Two),
            "3" => Ok(TableId::Three),
            "4" => Ok(TableId::Four),
            other => Err(format!("unknown table {other:?}, expected 2, 3 or 4")),
        }
    }
}

/// Settings for a table reproduction run. `epochs` overrides the training
/// epoch count, for quick, desk-scale runs.
#[derive(Debug, Clone, Serialize)]
pub struct ReproduceOptions {
    pub corpus: CorpusSource,
    pub seed: u64,
    #[serde(skip)]
    pub out_dir: PathBuf,
    pub epochs: Option<usize>,
    pub train: TrainConfig,
    pub metric: SsimConfig,
    pub nl_means: NlMeansConfig,
    pub median_window: usize,
    pub montage_images: usize,
    #[serde(skip)]
    pub progress: bool,
}

impl ReproduceOptions {
    pub fn new(corpus: CorpusSource, seed: u64, out_dir: PathBuf) -> Self {
        ReproduceOptions {
            corpus,
            seed,
            out_dir,
            epochs: None,
            train: TrainConfig::default(),
            metric: SsimConfig::default(),
            nl_means: NlMeansConfig::default(),
            median_window: 3,
            montage_images: 6,
            progress: false,
        }
    }

    fn resolved_train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs.unwrap_or(self.train.epochs),
            seed: self.seed,
            ..self.train
        }
    }
}

/// One measured cell of a reproduction table.
#[derive(Debug, Clone, PartialEq)]
pub struct TableEntry {
    pub method: String,
    pub column: String,
    pub measured: f64,
}

pub struct ReproduceOutcome {
    pub table: TableId,
    pub entries: Vec<TableEntry>,
    pub report: ResultsReport,
    pub notes: Vec<String>,
    pub out_dir: PathBuf,
    pub table_csv: PathBuf,
}

impl ReproduceOutcome {
    pub fn measured(&self, method: &str, column: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.method == method && e.column == column)
            .map(|e| e.measured)
    }
}

/// Published mean SSIM scores, kept as reference columns in the emitted
/// tables for human comparison, never as pass/fail thresholds.
pub const PUBLISHED_TABLE2: [(&str, &str, f64); 6] = [
    (METHOD_NOISY, "MMM", 0.45),
    (METHOD_NOISY, "DX", 0.62),
    (METHOD_DAE, "MMM", 0.81),
    (METHOD_DAE, "DX", 0.88),
    (METHOD_MEDIAN, "MMM", 0.73),
    (METHOD_MEDIAN, "DX", 0.86),
];

pub const PUBLISHED_TABLE3: [(&str, &str, f64); 5] = [
    (METHOD_NOISY, "combined", 0.63),
    (METHOD_NL_MEANS, "combined", 0.62),
    (METHOD_MEDIAN, "combined", 0.80),
    (METHOD_DAE_SMALL, "combined", 0.89),
    (METHOD_DAE_COMBINED, "combined", 0.90),
];

pub const TABLE4_COLUMNS: [&str; 4] = ["p0.5_s1", "p0.2_s5", "p0.2_s10", "p0.2_poisson5"];
const TABLE4_PRESETS: [usize; 4] = [1, 3, 6, 5];

pub const PUBLISHED_TABLE4: [(&str, &str, f64); 16] = [
    (METHOD_NOISY, "p0.5_s1", 0.10),
    (METHOD_NOISY, "p0.2_s5", 0.03),
    (METHOD_NOISY, "p0.2_s10", 0.01),
    (METHOD_NOISY, "p0.2_poisson5", 0.33),
    (METHOD_NL_MEANS, "p0.5_s1", 0.25),
    (METHOD_NL_MEANS, "p0.2_s5", 0.03),
    (METHOD_NL_MEANS, "p0.2_s10", 0.01),
    (METHOD_NL_MEANS, "p0.2_poisson5", 0.15),
    (METHOD_MEDIAN, "p0.5_s1", 0.28),
    (METHOD_MEDIAN, "p0.2_s5", 0.11),
    (METHOD_MEDIAN, "p0.2_s10", 0.03),
    (METHOD_MEDIAN, "p0.2_poisson5", 0.17),
    (METHOD_DAE, "p0.5_s1", 0.70),
    (METHOD_DAE, "p0.2_s5", 0.55),
    (METHOD_DAE, "p0.2_s10", 0.39),
    (METHOD_DAE, "p0.2_poisson5", 0.85),
];

fn published_for(table: TableId) -> &'static [(&'static str, &'static str, f64)] {
    match table {
        TableId::Two => &PUBLISHED_TABLE2,
        TableId::Three => &PUBLISHED_TABLE3,
        TableId::Four => &PUBLISHED_TABLE4,
    }
}

fn table_csv(
    report: &ResultsReport,
    entries: &[TableEntry],
    published: &[(&str, &str, f64)],
) -> String {
    let mut columns: Vec<String> = Vec::new();
    let mut methods: Vec<String> = Vec::new();
    for e in entries {
        if !columns.contains(&e.column) {
            columns.push(e.column.clone());
        }
        if !methods.contains(&e.method) {
            methods.push(e.method.clone());
        }
    }
    let mut pub_cols: Vec<&str> = Vec::new();
    for &(_, c, _) in published {
        if !pub_cols.contains(&c) {
            pub_cols.push(c);
        }
    }

    let mut out = format!("# config_hash={}\n# seed={}\n", report.config_hash, report.seed);
    out.push_str("method");
    for c in &columns {
        out.push_str(&format!(",{c}"));
    }
    for c in &pub_cols {
        out.push_str(&format!(",published_{c}"));
    }
    out.push('\n');
    for m in &methods {
        out.push_str(m);
        for c in &columns {
            match entries.iter().find(|e| &e.method == m && &e.column == c) {
                Some(e) => out.push_str(&format!(",{}", e.measured)),
                None => out.push(','),
            }
        }
        for c in &pub_cols {
            match published.iter().find(|(pm, pc, _)| pm == m && pc == c) {
                Some((_, _, v)) => out.push_str(&format!(",{v}")),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

struct TableRun {
    entries: Vec<TableEntry>,
    report: ResultsReport,
    notes: Vec<String>,
}

fn reproduce_hash(table: TableId, options: &ReproduceOptions) -> String {
    hash_of(&(
        "reproduce",
        table,
        options,
        options.resolved_train(),
    ))
}

fn test_composition_note(manifest: &DatasetManifest, test: &[usize]) -> String {
    let mut parts = Vec::new();
    for tag in DatasetTag::ALL {
        let n = test
            .iter()
            .filter(|&&i| manifest.entries[i].tag == tag)
            .count();
        if n > 0 {
            parts.push(format!("{tag} {n}"));
        }
    }
    format!("test set composition: {}", parts.join(", "))
}

fn reproduce_table2(options: &ReproduceOptions) -> Result<TableRun, ExperimentError> {
    let corpus = stage("load-corpus", load_corpus(&options.corpus, options.seed))?;
    let plan = stage(
        "split",
        make_splits(&corpus.manifest, SplitMode::PerDataset, options.seed)
            .map_err(ExperimentError::from),
    )?;
    let noise = preset_by_index(0)?;
    let noise_id = noise.id();
    let noisy_all = stage("corrupt", corrupt_images(&corpus.images, &noise, options.seed))?;

    let mut notes = vec![corpus.note.clone(), plan.note.clone()];
    if corpus.synthetic {
        notes.push(
            "synthetic fallback corpus engaged; group labels do not correspond to the published datasets"
                .into(),
        );
    }
    let mut report = ResultsReport::new(reproduce_hash(TableId::Two, options), options.seed);
    let mut entries = Vec::new();
    let train_config = options.resolved_train();

    for group in &plan.groups {
        let trained = stage(
            &format!("train-{}", group.label),
            train_and_save(
                &group.label,
                &select(&noisy_all, &group.train),
                &select(&corpus.images, &group.train),
                &train_config,
                &options.out_dir,
                options.progress,
            ),
        )?;
        let clean_test = select(&corpus.images, &group.test);
        let noisy_test = select(&noisy_all, &group.test);
        let ids_test = select(&corpus.ids, &group.test);
        let spec = default_architecture();
        let dae_test = stage(
            &format!("denoise-{}", group.label),
            run_model(&trained.params, &spec, &noisy_test),
        )?;
        let median_test = stage(
            &format!("median-{}", group.label),
            apply_median(&noisy_test, options.median_window),
        )?;

        for (method, processed) in [
            (METHOD_NOISY, &noisy_test),
            (METHOD_DAE, &dae_test),
            (METHOD_MEDIAN, &median_test),
        ] {
            let mean = stage(
                &format!("evaluate-{}-{}", method, group.label),
                evaluate_method(
                    &mut report,
                    &clean_test,
                    processed,
                    &ids_test,
                    method,
                    &noise_id,
                    &options.metric,
                ),
            )?;
            entries.push(TableEntry {
                method: method.to_string(),
                column: group.label.clone(),
                measured: mean,
            });
        }
        write_montage(
            &options
                .out_dir
                .join(format!("montage_{}.png", sanitize(&group.label))),
            &[&clean_test, &noisy_test, &dae_test, &median_test],
            options.montage_images,
        )?;
    }
    Ok(TableRun {
        entries,
        report,
        notes,
    })
}

fn reproduce_table3(options: &ReproduceOptions) -> Result<TableRun, ExperimentError> {
    let corpus = stage("load-corpus", load_corpus(&options.corpus, options.seed))?;
    let plan = stage(
        "split",
        make_splits(&corpus.manifest, SplitMode::Combined, options.seed)
            .map_err(ExperimentError::from),
    )?;
    let group = &plan.groups[0];
    let noise = preset_by_index(0)?;
    let noise_id = noise.id();
    let noisy_all = stage("corrupt", corrupt_images(&corpus.images, &noise, options.seed))?;

    let mut notes = vec![corpus.note.clone(), plan.note.clone()];
    notes.push(test_composition_note(&corpus.manifest, &group.test));

    let small_idx: Vec<usize> = if group.train.len() > 300 {
        let mut order = group.train.clone();
        let mut stream = Stream::keyed(options.seed, SALT_SUBSET, 0);
        shuffle(&mut order, &mut stream);
        let mut small: Vec<usize> = order[..300].to_vec();
        small.sort_unstable();
        small
    } else {
        notes.push(format!(
            "combined training set has only {} images, so the small-train model uses all of them",
            group.train.len()
        ));
        group.train.clone()
    };
    notes.push(format!(
        "small-train model: {} images; combined model: {} images",
        small_idx.len(),
        group.train.len()
    ));

    let train_config = options.resolved_train();
    let model_a = stage(
        "train-small",
        train_and_save(
            "small",
            &select(&noisy_all, &small_idx),
            &select(&corpus.images, &small_idx),
            &train_config,
            &options.out_dir,
            options.progress,
        ),
    )?;
    let model_b = stage(
        "train-combined",
        train_and_save(
            "combined",
            &select(&noisy_all, &group.train),
            &select(&corpus.images, &group.train),
            &train_config,
            &options.out_dir,
            options.progress,
        ),
    )?;

    let clean_test = select(&corpus.images, &group.test);
    let noisy_test = select(&noisy_all, &group.test);
    let ids_test = select(&corpus.ids, &group.test);
    let spec = default_architecture();
    let nl_test = stage("nl-means", apply_nl_means(&noisy_test, &options.nl_means))?;
    let median_test = stage("median", apply_median(&noisy_test, options.median_window))?;
    let dae_a_test = stage("denoise-small", run_model(&model_a.params, &spec, &noisy_test))?;
    let dae_b_test = stage(
        "denoise-combined",
        run_model(&model_b.params, &spec, &noisy_test),
    )?;

    let mut report = ResultsReport::new(reproduce_hash(TableId::Three, options), options.seed);
    let mut entries = Vec::new();
    for (method, processed) in [
        (METHOD_NOISY, &noisy_test),
        (METHOD_NL_MEANS, &nl_test),
        (METHOD_MEDIAN, &median_test),
        (METHOD_DAE_SMALL, &dae_a_test),
        (METHOD_DAE_COMBINED, &dae_b_test),
    ] {
        let mean = stage(
            &format!("evaluate-{method}"),
            evaluate_method(
                &mut report,
                &clean_test,
                processed,
                &ids_test,
                method,
                &noise_id,
                &options.metric,
            ),
        )?;
        entries.push(TableEntry {
            method: method.to_string(),
            column: "combined".to_string(),
            measured: mean,
        });
    }
    write_montage(
        &options.out_dir.join("montage_combined.png"),
        &[
            &clean_test,
            &noisy_test,
            &nl_test,
            &median_test,
            &dae_a_test,
            &dae_b_test,
        ],
        options.montage_images,
    )?;
    Ok(TableRun {
        entries,
        report,
        notes,
    })
}

fn reproduce_table4(options: &ReproduceOptions) -> Result<TableRun, ExperimentError> {
    let corpus = stage("load-corpus", load_corpus(&options.corpus, options.seed))?;
    let plan = stage(
        "split",
        make_splits(&corpus.manifest, SplitMode::Combined, options.seed)
            .map_err(ExperimentError::from),
    )?;
    let group = &plan.groups[0];
    let mut notes = vec![corpus.note.clone(), plan.note.clone()];
    notes.push(test_composition_note(&corpus.manifest, &group.test));

    let mut report = ResultsReport::new(reproduce_hash(TableId::Four, options), options.seed);
    let mut entries = Vec::new();
    let train_config = options.resolved_train();
    let clean_train = select(&corpus.images, &group.train);
    let clean_test = select(&corpus.images, &group.test);
    let ids_test = select(&corpus.ids, &group.test);
    let spec = default_architecture();

    for (column, preset) in TABLE4_COLUMNS.iter().zip(TABLE4_PRESETS) {
        let noise = preset_by_index(preset)?;
        let noise_id = noise.id();
        let noisy_all = stage(
            &format!("corrupt-{column}"),
            corrupt_images(&corpus.images, &noise, options.seed),
        )?;
        let trained = stage(
            &format!("train-{column}"),
            train_and_save(
                column,
                &select(&noisy_all, &group.train),
                &clean_train,
                &train_config,
                &options.out_dir,
                options.progress,
            ),
        )?;
        let noisy_test = select(&noisy_all, &group.test);
        let nl_test = stage(
            &format!("nl-means-{column}"),
            apply_nl_means(&noisy_test, &options.nl_means),
        )?;
        let median_test = stage(
            &format!("median-{column}"),
            apply_median(&noisy_test, options.median_window),
        )?;
        let dae_test = stage(
            &format!("denoise-{column}"),
            run_model(&trained.params, &spec, &noisy_test),
        )?;

        for (method, processed) in [
            (METHOD_NOISY, &noisy_test),
            (METHOD_NL_MEANS, &nl_test),
            (METHOD_MEDIAN, &median_test),
            (METHOD_DAE, &dae_test),
        ] {
            let mean = stage(
                &format!("evaluate-{method}-{column}"),
                evaluate_method(
                    &mut report,
                    &clean_test,
                    processed,
                    &ids_test,
                    method,
                    &noise_id,
                    &options.metric,
                ),
            )?;
            entries.push(TableEntry {
                method: method.to_string(),
                column: column.to_string(),
                measured: mean,
            });
        }
        write_montage(
            &options.out_dir.join(format!("montage_{}.png", sanitize(column))),
            &[&clean_test, &noisy_test, &dae_test],
            options.montage_images,
        )?;
    }
    Ok(TableRun {
        entries,
        report,
        notes,
    })
}

/// Runs every condition of the chosen table, writes the result bundle
/// (per-image CSV, means CSV, shaped table CSV with published reference
/// columns, montages, checkpoints, loss curves, metadata), and returns the
/// measured table.
pub fn cmd_reproduce(
    table: TableId,
    options: &ReproduceOptions,
) -> Result<ReproduceOutcome, ExperimentError> {
    let started = Instant::now();
    std::fs::create_dir_all(&options.out_dir)?;
    let run = match table {
        TableId::Two => reproduce_table2(options),
        TableId::Three => reproduce_table3(options),
        TableId::Four => reproduce_table4(options),
    }?;

    let table_csv_path = options.out_dir.join(format!("table{}.csv", table.number()));
    std::fs::write(
        &table_csv_path,
        table_csv(&run.report, &run.entries, published_for(table)),
    )?;
    std::fs::write(options.out_dir.join("per_image.csv"), run.report.per_image_csv())?;
    std::fs::write(options.out_dir.join("means.csv"), run.report.means_csv())?;

    #[derive(Serialize)]
    struct Metadata<'a> {
        table: u32,
        config_hash: &'a str,
        seed: u64,
        wall_seconds: f64,
        notes: &'a [String],
    }
    let metadata = Metadata {
        table: table.number(),
        config_hash: &run.report.config_hash,
        seed: options.seed,
        wall_seconds: started.elapsed().as_secs_f64(),
        notes: &run.notes,
    };
    std::fs::write(
        options.out_dir.join("metadata.json"),
        serde_json::to_string_pretty(&metadata).expect("metadata serializes"),
    )?;

    Ok(ReproduceOutcome {
        table,
        entries: run.entries,
        report: run.report,
        notes: run.notes,
        out_dir: options.out_dir.clone(),
        table_csv: table_csv_path,
    })
}
