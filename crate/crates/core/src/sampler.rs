//! Chunk sampling and curriculum dataset building.
//!
//! A page of height `H` split into `L` chunks gets full-width bands of height
//! `floor(H / L)`. Training chunks start at a uniformly drawn row; evaluation
//! chunks tile the page top to bottom with the last tile absorbing the
//! remainder. A curriculum is a sequence of stages with strictly decreasing
//! `L`, each written as JSONL shards plus a `manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fsutil::{to_jsonl, write_atomic};
use crate::geometry::BandSpan;
use crate::ingest::ReceiptPage;
use crate::labeler::{build_chunk_label, ChunkLabel, LabelError, LabelerConfig};

pub const DEFAULT_STAGES: [u32; 6] = [30, 15, 7, 4, 2, 1];
pub const DEFAULT_SAMPLES_PER_IMAGE: u32 = 20;
pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
/// Extra draws allowed per sample when empty chunks are resampled.
pub const MAX_RESAMPLE_RETRIES: u32 = 10;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("page {page_id} has height {height} < {chunks} chunks")]
    PageTooShort {
        page_id: String,
        height: u32,
        chunks: u32,
    },
    #[error("chunk count must be at least 1")]
    ZeroChunks,
    #[error("samples per image must be at least 1")]
    ZeroSamples,
    #[error("epochs must be at least 1")]
    ZeroEpochs,
    #[error("stage list is empty")]
    NoStages,
    #[error("stage chunk counts must strictly decrease, got {0:?}")]
    StagesNotDecreasing(Vec<u32>),
    #[error("band [{y_start}, {y_end}) is outside the page height {height}")]
    BandOutOfRange {
        y_start: u32,
        y_end: u32,
        height: u32,
    },
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error("unreadable image {path}: {reason}")]
    UnreadableImage { path: PathBuf, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SamplerError + '_ {
    move |source| SamplerError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    Random,
    Tiled,
}

/// One chunk of one page together with its constructed label.
#[derive(Clone, Debug, PartialEq)]
pub struct ChunkSample {
    pub page_id: String,
    pub band: BandSpan,
    pub label: ChunkLabel,
    pub stage_l: u32,
    pub sample_index: u32,
    pub crop_path: Option<PathBuf>,
}

/// Shard line layout.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardRecord {
    pub page_id: String,
    pub y_start: u32,
    pub y_end: u32,
    pub label: String,
    #[serde(rename = "stage_L")]
    pub stage_l: u32,
    pub sample_index: u32,
    pub crop_path: Option<String>,
}

impl From<&ChunkSample> for ShardRecord {
    fn from(s: &ChunkSample) -> Self {
        ShardRecord {
            page_id: s.page_id.clone(),
            y_start: s.band.y_start(),
            y_end: s.band.y_end(),
            label: s.label.joined.clone(),
            stage_l: s.stage_l,
            sample_index: s.sample_index,
            crop_path: s
                .crop_path
                .as_ref()
                .map(|p| p.to_string_lossy().replace('\\', "/")),
        }
    }
}

/// `floor(H / L)`, rejecting pages with fewer rows than chunks.
pub fn chunk_height(page: &ReceiptPage, chunks: u32) -> Result<u32, SamplerError> {
    if chunks == 0 {
        return Err(SamplerError::ZeroChunks);
    }
    if page.height < chunks {
        return Err(SamplerError::PageTooShort {
            page_id: page.page_id.clone(),
            height: page.height,
            chunks,
        });
    }
    Ok(page.height / chunks)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SamplingOptions {
    /// Redraw chunks whose label is empty, up to [`MAX_RESAMPLE_RETRIES`] times.
    pub resample_empty: bool,
}

/// Draw `samples` random bands of height `floor(H / L)` with start rows
/// uniform over the closed range `[0, H - h]`.
pub fn sample_training_chunks<R: Rng + ?Sized>(
    page: &ReceiptPage,
    chunks: u32,
    samples: u32,
    rng: &mut R,
    config: &LabelerConfig,
    options: SamplingOptions,
) -> Result<Vec<ChunkSample>, SamplerError> {
    if samples == 0 {
        return Err(SamplerError::ZeroSamples);
    }
    let h = chunk_height(page, chunks)?;
    let max_start = page.height - h;
    let mut out = Vec::with_capacity(samples as usize);
    for sample_index in 0..samples {
        let mut attempt = 0;
        let (band, label) = loop {
            let s = rng.gen_range(0..=max_start);
            let band = BandSpan::new(s, s + h).expect("h >= 1");
            let label = build_chunk_label(page, &band, config);
            if !options.resample_empty || !label.is_empty() || attempt == MAX_RESAMPLE_RETRIES {
                break (band, label);
            }
            attempt += 1;
        };
        out.push(ChunkSample {
            page_id: page.page_id.clone(),
            band,
            label,
            stage_l: chunks,
            sample_index,
            crop_path: None,
        });
    }
    Ok(out)
}

/// Bands `[k*h, (k+1)*h)` for `k < L-1` and a final band `[(L-1)*h, H)`.
pub fn tile_bands(height: u32, chunks: u32) -> Vec<BandSpan> {
    if chunks == 0 || height < chunks {
        return Vec::new();
    }
    let h = height / chunks;
    (0..chunks)
        .map(|k| {
            let end = if k + 1 == chunks { height } else { (k + 1) * h };
            BandSpan::new(k * h, end).expect("non-empty tile")
        })
        .collect()
}

/// Exactly `L` sequential chunks covering the page.
pub fn tile_eval_chunks(
    page: &ReceiptPage,
    chunks: u32,
    config: &LabelerConfig,
) -> Result<Vec<ChunkSample>, SamplerError> {
    chunk_height(page, chunks)?;
    Ok(tile_bands(page.height, chunks)
        .into_iter()
        .zip(0..)
        .map(|(band, sample_index)| ChunkSample {
            page_id: page.page_id.clone(),
            label: build_chunk_label(page, &band, config),
            band,
            stage_l: chunks,
            sample_index,
            crop_path: None,
        })
        .collect())
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ *b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Seed of one curriculum stage.
pub fn stage_seed(global_seed: u64, chunks: u32) -> u64 {
    splitmix64(global_seed ^ splitmix64(chunks as u64))
}

/// Seed of the sample stream for one page in one epoch of a stage.
pub fn page_seed(stage_seed: u64, epoch: u32, page_id: &str) -> u64 {
    splitmix64(splitmix64(stage_seed ^ splitmix64(epoch as u64)) ^ fnv1a(page_id.as_bytes()))
}

pub fn page_rng(stage_seed: u64, epoch: u32, page_id: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(page_seed(stage_seed, epoch, page_id))
}

/// Cut rows `[y_start, y_end)` of the page image and write them as PNG.
pub fn crop_chunk_image(
    page: &ReceiptPage,
    band: &BandSpan,
    out_path: &Path,
) -> Result<PathBuf, SamplerError> {
    let img = open_image(&page.image_path)?;
    crop_loaded(&img, band, out_path)
}

fn open_image(path: &Path) -> Result<image::DynamicImage, SamplerError> {
    image::open(path).map_err(|e| SamplerError::UnreadableImage {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn crop_loaded(
    img: &image::DynamicImage,
    band: &BandSpan,
    out_path: &Path,
) -> Result<PathBuf, SamplerError> {
    if band.y_end() > img.height() {
        return Err(SamplerError::BandOutOfRange {
            y_start: band.y_start(),
            y_end: band.y_end(),
            height: img.height(),
        });
    }
    let crop = img.crop_imm(0, band.y_start(), img.width(), band.height());
    let mut bytes = Vec::new();
    crop.write_to(
        &mut std::io::Cursor::new(&mut bytes),
        image::ImageFormat::Png,
    )
    .map_err(|e| SamplerError::UnreadableImage {
        path: out_path.to_path_buf(),
        reason: e.to_string(),
    })?;
    write_atomic(out_path, &bytes).map_err(io_err(out_path))?;
    Ok(out_path.to_path_buf())
}

pub fn crop_file_name(page_id: &str, chunks: u32, sample_index: u32) -> String {
    format!("{page_id}_L{chunks}_k{sample_index}.png")
}

/// Parameters of a curriculum build.
#[derive(Clone, Debug, PartialEq)]
pub struct CurriculumSpec {
    pub stages: Vec<u32>,
    pub samples_per_image: u32,
    pub mode: SampleMode,
    pub epochs: u32,
    pub global_seed: u64,
    pub materialize_crops: bool,
    pub resample_empty: bool,
    /// Emit one sample per page for `L = 1` in random mode, since every draw
    /// is the same full-page band.
    pub dedup_full_page: bool,
}

impl Default for CurriculumSpec {
    fn default() -> Self {
        CurriculumSpec {
            stages: DEFAULT_STAGES.to_vec(),
            samples_per_image: DEFAULT_SAMPLES_PER_IMAGE,
            mode: SampleMode::Random,
            epochs: 1,
            global_seed: 0,
            materialize_crops: false,
            resample_empty: false,
            dedup_full_page: true,
        }
    }
}

impl CurriculumSpec {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.stages.is_empty() {
            return Err(SamplerError::NoStages);
        }
        if self.stages.contains(&0) {
            return Err(SamplerError::ZeroChunks);
        }
        if self.stages.windows(2).any(|w| w[0] <= w[1]) {
            return Err(SamplerError::StagesNotDecreasing(self.stages.clone()));
        }
        if self.samples_per_image == 0 {
            return Err(SamplerError::ZeroSamples);
        }
        if self.epochs == 0 {
            return Err(SamplerError::ZeroEpochs);
        }
        Ok(())
    }

    /// Samples emitted per page per epoch for a stage.
    pub fn samples_for(&self, chunks: u32) -> u32 {
        match self.mode {
            SampleMode::Tiled => chunks,
            SampleMode::Random if chunks == 1 && self.dedup_full_page => 1,
            SampleMode::Random => self.samples_per_image,
        }
    }

    /// Tiling is deterministic, so it only ever gets one epoch.
    pub fn epochs_for(&self) -> u32 {
        match self.mode {
            SampleMode::Tiled => 1,
            SampleMode::Random => self.epochs,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestStage {
    #[serde(rename = "L")]
    pub chunks: u32,
    #[serde(rename = "N")]
    pub samples_per_image: u32,
    pub mode: SampleMode,
    pub seed: u64,
    /// First epoch shard, relative to the manifest directory.
    pub shard_path: String,
    pub epochs: u32,
    /// One shard per epoch, in epoch order.
    pub epoch_shards: Vec<String>,
    pub records: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub dataset_root: String,
    pub global_seed: u64,
    pub config: LabelerConfig,
    pub stages: Vec<ManifestStage>,
}

impl Manifest {
    pub fn validate(&self) -> Result<(), SamplerError> {
        let ls: Vec<u32> = self.stages.iter().map(|s| s.chunks).collect();
        if ls.is_empty() {
            return Err(SamplerError::NoStages);
        }
        if ls.windows(2).any(|w| w[0] <= w[1]) {
            return Err(SamplerError::StagesNotDecreasing(ls));
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Manifest, SamplerError> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        serde_json::from_slice(&bytes).map_err(|e| SamplerError::Io {
            path: path.to_path_buf(),
            source: e.into(),
        })
    }
}

/// Samples of one page for one epoch of one stage.
pub fn page_samples(
    page: &ReceiptPage,
    chunks: u32,
    epoch: u32,
    stage_seed: u64,
    spec: &CurriculumSpec,
    config: &LabelerConfig,
) -> Result<Vec<ChunkSample>, SamplerError> {
    match spec.mode {
        SampleMode::Tiled => tile_eval_chunks(page, chunks, config),
        SampleMode::Random => {
            let mut rng = page_rng(stage_seed, epoch, &page.page_id);
            sample_training_chunks(
                page,
                chunks,
                spec.samples_for(chunks),
                &mut rng,
                config,
                SamplingOptions {
                    resample_empty: spec.resample_empty,
                },
            )
        }
    }
}

fn crop_dir(epoch: u32) -> PathBuf {
    if epoch == 0 {
        PathBuf::from("crops")
    } else {
        PathBuf::from("crops").join(format!("e{epoch}"))
    }
}

fn shard_rel_path(chunks: u32, epoch: u32) -> String {
    format!("shards/L{chunks}_e{epoch}.jsonl")
}

/// Write all stage shards and `manifest.json` under `out_dir`.
///
/// Paths inside the manifest and shards are relative to `out_dir`, so the
/// output depends only on the pages, the spec and the config.
pub fn build_curriculum(
    pages: &[ReceiptPage],
    dataset_root: &str,
    spec: &CurriculumSpec,
    config: &LabelerConfig,
    out_dir: &Path,
) -> Result<Manifest, SamplerError> {
    spec.validate()?;
    config.validate()?;
    config.check_separator(pages)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;

    let mut stages = Vec::with_capacity(spec.stages.len());
    for &chunks in &spec.stages {
        let seed = stage_seed(spec.global_seed, chunks);
        let mut epoch_shards = Vec::new();
        let mut records = 0;
        for epoch in 0..spec.epochs_for() {
            let per_page: Vec<Vec<ChunkSample>> = pages
                .par_iter()
                .map(|page| {
                    let mut samples = page_samples(page, chunks, epoch, seed, spec, config)?;
                    if spec.materialize_crops {
                        let img = open_image(&page.image_path)?;
                        for s in &mut samples {
                            let rel = crop_dir(epoch).join(crop_file_name(
                                &page.page_id,
                                chunks,
                                s.sample_index,
                            ));
                            crop_loaded(&img, &s.band, &out_dir.join(&rel))?;
                            s.crop_path = Some(rel);
                        }
                    }
                    Ok(samples)
                })
                .collect::<Result<_, SamplerError>>()?;

            let rel = shard_rel_path(chunks, epoch);
            let path = out_dir.join(&rel);
            let shard: Vec<ShardRecord> =
                per_page.iter().flatten().map(ShardRecord::from).collect();
            records += shard.len();
            let bytes = to_jsonl(&shard).map_err(|e| SamplerError::Io {
                path: path.clone(),
                source: e.into(),
            })?;
            write_atomic(&path, &bytes).map_err(io_err(&path))?;
            epoch_shards.push(rel);
        }
        stages.push(ManifestStage {
            chunks,
            samples_per_image: spec.samples_for(chunks),
            mode: spec.mode,
            seed,
            shard_path: epoch_shards[0].clone(),
            epochs: spec.epochs_for(),
            epoch_shards,
            records,
        });
    }

    let manifest = Manifest {
        version: MANIFEST_VERSION,
        dataset_root: dataset_root.to_string(),
        global_seed: spec.global_seed,
        config: config.clone(),
        stages,
    };
    let path = out_dir.join(MANIFEST_FILE);
    let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    bytes.push(b'\n');
    write_atomic(&path, &bytes).map_err(io_err(&path))?;
    Ok(manifest)
}

/// Read a JSONL shard back into records.
pub fn read_shard(path: &Path) -> Result<Vec<ShardRecord>, SamplerError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| SamplerError::Io {
                path: path.to_path_buf(),
                source: e.into(),
            })
        })
        .collect()
}
