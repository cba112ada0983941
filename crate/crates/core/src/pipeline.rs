//! Dataset generation and annotation runs.
//!
//! `generate` synthesizes scenes, records one or more camera walks per
//! scene, writes the raw sequences and then runs exactly the same
//! annotation pass that `annotate` runs on an existing raw directory, so
//! both produce byte-identical clip documents and manifests.

use crate::annotate::{annotate_clips, AnnotationConfig};
use crate::io::{
    read_manifest, read_raw_sequence, split_scenes, write_manifest, write_raw_sequence, write_sequence, DatasetManifest, RawEntry,
    Split, MANIFEST_FILE, SCHEMA_VERSION,
};
use crate::scene::{generate_scene, record_sequence, segment_clips, CameraConfig, SceneConfig};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Clip segmentation, scene split and annotation settings shared by both runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotateConfig {
    pub clip_len: usize,
    pub stride: usize,
    /// Fraction of scenes assigned to the validation split; 0 keeps all in train.
    pub val_fraction: f64,
    pub split_seed: u64,
    pub annotation: AnnotationConfig,
}

impl Default for AnnotateConfig {
    fn default() -> Self {
        Self { clip_len: 10, stride: 5, val_fraction: 0.2, split_seed: 0, annotation: AnnotationConfig::default() }
    }
}

impl AnnotateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clip_len == 0 || self.stride == 0 {
            return Err(Error::Config("clip_len and stride must be positive".into()));
        }
        if self.stride > self.clip_len {
            return Err(Error::Config(format!("stride {} exceeds clip_len {}", self.stride, self.clip_len)));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!("val_fraction must be in [0, 1), got {}", self.val_fraction)));
        }
        self.annotation.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub seed: u64,
    pub n_scenes: usize,
    pub sequences_per_scene: usize,
    pub frames_per_sequence: usize,
    pub scene: SceneConfig,
    pub camera: CameraConfig,
    pub annotate: AnnotateConfig,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            n_scenes: 5,
            sequences_per_scene: 1,
            frames_per_sequence: 20,
            scene: SceneConfig::default(),
            camera: CameraConfig::default(),
            annotate: AnnotateConfig::default(),
        }
    }
}

impl GenerateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_scenes == 0 || self.sequences_per_scene == 0 {
            return Err(Error::Config("n_scenes and sequences_per_scene must be positive".into()));
        }
        if self.frames_per_sequence < self.annotate.clip_len {
            return Err(Error::Config(format!(
                "frames_per_sequence {} is shorter than clip_len {}",
                self.frames_per_sequence, self.annotate.clip_len
            )));
        }
        self.scene.validate()?;
        self.camera.validate()?;
        self.annotate.validate()
    }
}

pub fn scene_id(i: usize) -> String {
    format!("scene_{i:03}")
}

pub fn sequence_id(scene: usize, seq: usize) -> String {
    format!("scene_{scene:03}_{seq:02}")
}

/// Synthesizes and annotates a dataset under `root`.
pub fn generate(cfg: &GenerateConfig, root: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    // one independent seed pair per scene, drawn up front
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let seeds: Vec<(u64, u64)> = (0..cfg.n_scenes).map(|_| (rng.random(), rng.random())).collect();
    let raws = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &(scene_seed, walk_seed))| {
            let scene = generate_scene(&cfg.scene, scene_seed)?;
            (0..cfg.sequences_per_scene)
                .map(|j| {
                    record_sequence(&sequence_id(i, j), &scene_id(i), &scene, &cfg.camera, cfg.frames_per_sequence, walk_seed.wrapping_add(j as u64))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut entries = Vec::new();
    for raw in raws.iter().flatten() {
        entries.push(write_raw_sequence(raw, root)?);
        log::info!("wrote raw sequence {} ({} frames)", raw.sequence_id, raw.frames.len());
    }
    annotate_raw(&entries, root, &cfg.annotate)
}

/// Re-annotates the raw sequences listed in `root`'s manifest, or all
/// `raw/*/sequence.json` files when no manifest exists yet. The `clips/`
/// directory is rebuilt from scratch.
pub fn annotate(root: &Path, cfg: &AnnotateConfig) -> Result<DatasetManifest> {
    cfg.validate()?;
    let entries = if root.join(MANIFEST_FILE).exists() {
        read_manifest(root)?.raw
    } else {
        let dir = root.join("raw");
        let listing = std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut entries = Vec::new();
        for item in listing {
            let path = item.map_err(|e| Error::io(&dir, e))?.path().join("sequence.json");
            if path.is_file() {
                let raw = read_raw_sequence(&path)?;
                let rel = path.strip_prefix(root).expect("listed under root").to_string_lossy().replace('\\', "/");
                entries.push(RawEntry { id: raw.sequence_id, scene_id: raw.scene_id, frame_count: raw.frames.len(), path: rel });
            }
        }
        entries.sort_by(|a, b| a.id.cmp(&b.id));
        entries
    };
    annotate_raw(&entries, root, cfg)
}

fn annotate_raw(entries: &[RawEntry], root: &Path, cfg: &AnnotateConfig) -> Result<DatasetManifest> {
    cfg.validate()?;
    let clips_dir = root.join("clips");
    if clips_dir.exists() {
        std::fs::remove_dir_all(&clips_dir).map_err(|e| Error::io(&clips_dir, e))?;
    }
    let scene_ids: Vec<String> = entries.iter().map(|e| e.scene_id.clone()).collect();
    let val: Vec<String> =
        if cfg.val_fraction > 0.0 { split_scenes(&scene_ids, cfg.val_fraction, cfg.split_seed)?.1 } else { Vec::new() };
    let annotated = entries
        .par_iter()
        .map(|e| {
            let raw = read_raw_sequence(&root.join(&e.path))?;
            let clips = segment_clips(&raw, cfg.clip_len, cfg.stride)?;
            annotate_clips(&clips, &raw.scene, &cfg.annotation)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sequences = Vec::new();
    for clip in annotated.iter().flatten() {
        let mut entry = write_sequence(clip, root)?;
        if val.contains(&clip.scene_id) {
            entry.split = Split::Val;
        }
        sequences.push(entry);
    }
    let manifest = DatasetManifest { schema_version: SCHEMA_VERSION, raw: entries.to_vec(), sequences };
    write_manifest(&manifest, root)?;
    log::info!("annotated {} clips from {} raw sequences", manifest.sequences.len(), entries.len());
    Ok(manifest)
}
