//! On-disk dataset layout.
//!
//! ```text
//! root/
//!   manifest.json                  DatasetManifest
//!   raw/<seq>/sequence.json        scene, intrinsics, trajectory
//!   raw/<seq>/depth_00000.bin      f32 depth raster
//!   raw/<seq>/instance_00000.bin   f32 instance-id raster
//!   clips/<clip>.json              annotated clip
//! ```
//!
//! Documents are pretty-printed JSON with a fixed field order, so writing the
//! same value twice gives identical bytes. Floats use the shortest decimal
//! form that parses back to the same `f64`. Raster paths inside documents
//! are relative to the dataset root.
//!
//! Rasters are little-endian: a 16-byte header (`magic: [u8; 4]`, `width`,
//! `height`, `channels` as `u32`) followed by `width·height·channels` `f32`
//! values in row-major order. Depth uses `+inf` for pixels without a hit;
//! instance maps store ids as exact integers.

use crate::clip::{FrameRecord, ObjectAnnotation, SequenceClip};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, DepthMap, Mask2D, Mat3, OrientedBox3D, Rect, RigidTransform, Vec3};
use crate::scene::{RawFrame, RawSequence, SceneObject, SceneSpec, TrajectorySpec};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEPTH_MAGIC: [u8; 4] = *b"SBDP";
pub const INSTANCE_MAGIC: [u8; 4] = *b"SBIN";
const HEADER_LEN: usize = 16;

// ---------------------------------------------------------------- rasters

fn encode_raster(magic: [u8; 4], width: u32, height: u32, values: impl Iterator<Item = f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * (width * height) as usize);
    out.extend_from_slice(&magic);
    for v in [width, height, 1] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode_raster(path: &Path, magic: [u8; 4]) -> Result<(u32, u32, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: String| Error::schema(path.display().to_string(), msg);
    if bytes.len() < HEADER_LEN || bytes[..4] != magic {
        return Err(bad(format!("missing {:?} raster header", String::from_utf8_lossy(&magic))));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[4 * k..4 * k + 4].try_into().unwrap());
    let (w, h, c) = (word(1), word(2), word(3));
    if c != 1 {
        return Err(bad(format!("expected 1 channel, found {c}")));
    }
    let n = w as usize * h as usize;
    if bytes.len() != HEADER_LEN + 4 * n {
        return Err(bad(format!("{} payload bytes for a {w}x{h} raster", bytes.len() - HEADER_LEN)));
    }
    let data = bytes[HEADER_LEN..].chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
    Ok((w, h, data))
}

pub fn write_depth(path: &Path, depth: &DepthMap) -> Result<()> {
    write_bytes(path, &encode_raster(DEPTH_MAGIC, depth.width, depth.height, depth.data.iter().copied()))
}

pub fn read_depth(path: &Path) -> Result<DepthMap> {
    let (w, h, data) = decode_raster(path, DEPTH_MAGIC)?;
    DepthMap::from_vec(w, h, data).map_err(|e| Error::schema(path.display().to_string(), e.to_string()))
}

pub fn write_instance(path: &Path, mask: &Mask2D) -> Result<()> {
    if mask.data.iter().any(|&id| id > 1 << 24) {
        return Err(Error::InvalidInput("instance ids above 2^24 are not exactly representable".into()));
    }
    write_bytes(path, &encode_raster(INSTANCE_MAGIC, mask.width, mask.height, mask.data.iter().map(|&v| v as f32)))
}

pub fn read_instance(path: &Path) -> Result<Mask2D> {
    let (w, h, data) = decode_raster(path, INSTANCE_MAGIC)?;
    let ids = data
        .into_iter()
        .map(|v| (v >= 0.0 && v.fract() == 0.0 && v <= (1u32 << 24) as f32).then_some(v as u32))
        .collect::<Option<Vec<u32>>>()
        .ok_or_else(|| Error::schema(path.display().to_string(), "instance ids must be non-negative integers"))?;
    Mask2D::from_vec(w, h, ids)
}

// -------------------------------------------------------------- documents

/// Box as `[x, y, z, w, h, l, yaw]` plus the row-major rotation. `yaw` is
/// null unless the rotation is a pure rotation about the camera y axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxDoc {
    #[serde(rename = "box")]
    pub attributes: (f64, f64, f64, f64, f64, f64, Option<f64>),
    pub rotation: [f64; 9],
}

impl From<&OrientedBox3D> for BoxDoc {
    fn from(b: &OrientedBox3D) -> Self {
        let (c, d, m) = (b.center, b.dims, b.rotation.m);
        Self {
            attributes: (c.x, c.y, c.z, d.x, d.y, d.z, b.yaw()),
            rotation: [m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2]],
        }
    }
}

impl BoxDoc {
    fn to_box(&self, path: &str) -> Result<OrientedBox3D> {
        let (x, y, z, w, h, l, yaw) = self.attributes;
        let r = self.rotation;
        let b = OrientedBox3D::new(
            Vec3::new(x, y, z),
            Vec3::new(w, h, l),
            Mat3::from_rows([[r[0], r[1], r[2]], [r[3], r[4], r[5]], [r[6], r[7], r[8]]]),
        );
        b.validate().map_err(|e| Error::schema(path, e.to_string()))?;
        if let Some(yaw) = yaw {
            let expected = crate::geometry::yaw_rotation(yaw);
            if b.rotation.max_abs_diff(&expected) > 1e-6 {
                return Err(Error::schema(path, "yaw disagrees with rotation"));
            }
        }
        Ok(b)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicsDoc {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl From<&CameraIntrinsics> for IntrinsicsDoc {
    fn from(k: &CameraIntrinsics) -> Self {
        Self { fx: k.fx, fy: k.fy, cx: k.cx, cy: k.cy, width: k.width, height: k.height }
    }
}

impl IntrinsicsDoc {
    fn to_intrinsics(&self, path: &str) -> Result<CameraIntrinsics> {
        let k = CameraIntrinsics { fx: self.fx, fy: self.fy, cx: self.cx, cy: self.cy, width: self.width, height: self.height };
        k.validate().map_err(|e| Error::schema(path, e.to_string()))?;
        Ok(k)
    }
}

fn pose_of(a: &[f64; 12], path: &str) -> Result<RigidTransform> {
    let t = RigidTransform::from_row_major(a);
    RigidTransform::try_new(t.rotation, t.translation).map_err(|e| Error::schema(path, e.to_string()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectDoc {
    pub instance_id: u32,
    pub category: String,
    /// Camera frame of the object's own frame.
    pub camera: BoxDoc,
    /// Clip reference frame.
    pub world: BoxDoc,
    /// `[x0, y0, x1, y1]` in pixels.
    pub prompt: [f64; 4],
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameDoc {
    pub source_index: usize,
    /// Placeholder for an RGB image path; the synthetic recorder has none.
    pub image: Option<String>,
    pub intrinsics: IntrinsicsDoc,
    /// Camera-to-reference `[R | t]`, row-major.
    pub pose: [f64; 12],
    pub depth: String,
    pub instance: String,
    pub objects: Vec<ObjectDoc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceDoc {
    pub schema_version: u32,
    pub sequence_id: String,
    pub scene_id: String,
    pub frames: Vec<FrameDoc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObjectDoc {
    pub instance_id: u32,
    pub category: String,
    pub world: BoxDoc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawFrameDoc {
    pub pose: [f64; 12],
    pub depth: String,
    pub instance: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawSequenceDoc {
    pub schema_version: u32,
    pub sequence_id: String,
    pub scene_id: String,
    pub room: [f64; 3],
    pub background_categories: Vec<String>,
    pub objects: Vec<SceneObjectDoc>,
    pub intrinsics: IntrinsicsDoc,
    pub frames: Vec<RawFrameDoc>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub scene_id: String,
    pub frame_count: usize,
    /// Document path relative to the dataset root.
    pub path: String,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawEntry {
    pub id: String,
    pub scene_id: String,
    pub frame_count: usize,
    pub path: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub raw: Vec<RawEntry>,
    pub sequences: Vec<ManifestEntry>,
}

// ------------------------------------------------------------ conversion

pub fn sequence_doc(clip: &SequenceClip) -> SequenceDoc {
    SequenceDoc {
        schema_version: SCHEMA_VERSION,
        sequence_id: clip.sequence_id.clone(),
        scene_id: clip.scene_id.clone(),
        frames: clip
            .frames
            .iter()
            .map(|f| FrameDoc {
                source_index: f.source_index,
                image: None,
                intrinsics: (&f.intrinsics).into(),
                pose: f.pose.to_row_major(),
                depth: f.depth_file.clone(),
                instance: f.instance_file.clone(),
                objects: f
                    .objects
                    .iter()
                    .map(|o| ObjectDoc {
                        instance_id: o.instance_id,
                        category: o.category.clone(),
                        camera: (&o.bbox).into(),
                        world: (&o.box_world).into(),
                        prompt: [o.prompt.x0, o.prompt.y0, o.prompt.x1, o.prompt.y1],
                        score: o.score,
                    })
                    .collect(),
            })
            .collect(),
    }
}

fn check_version(v: u32) -> Result<()> {
    if v == SCHEMA_VERSION {
        Ok(())
    } else {
        Err(Error::schema("schema_version", format!("unsupported version {v}, expected {SCHEMA_VERSION}")))
    }
}

/// Loads rasters once per path; overlapping clips share frames.
#[derive(Default)]
pub struct RasterCache {
    depth: HashMap<PathBuf, Arc<DepthMap>>,
    instance: HashMap<PathBuf, Arc<Mask2D>>,
}

impl RasterCache {
    fn depth(&mut self, path: PathBuf, field: &str) -> Result<Arc<DepthMap>> {
        if let Some(d) = self.depth.get(&path) {
            return Ok(d.clone());
        }
        if !path.is_file() {
            return Err(Error::schema(field, format!("depth file {} does not exist", path.display())));
        }
        let d = Arc::new(read_depth(&path)?);
        self.depth.insert(path, d.clone());
        Ok(d)
    }

    fn instance(&mut self, path: PathBuf, field: &str) -> Result<Arc<Mask2D>> {
        if let Some(m) = self.instance.get(&path) {
            return Ok(m.clone());
        }
        if !path.is_file() {
            return Err(Error::schema(field, format!("instance file {} does not exist", path.display())));
        }
        let m = Arc::new(read_instance(&path)?);
        self.instance.insert(path, m.clone());
        Ok(m)
    }
}

fn check_raster_size(k: &CameraIntrinsics, w: u32, h: u32, field: &str) -> Result<()> {
    if (k.width, k.height) == (w, h) {
        Ok(())
    } else {
        Err(Error::schema(field, format!("raster is {w}x{h} but intrinsics say {}x{}", k.width, k.height)))
    }
}

/// Rebuilds a clip from its document, loading rasters under `root`.
pub fn clip_from_doc(doc: &SequenceDoc, root: &Path, cache: &mut RasterCache) -> Result<SequenceClip> {
    check_version(doc.schema_version)?;
    let mut frames = Vec::with_capacity(doc.frames.len());
    for (i, f) in doc.frames.iter().enumerate() {
        let at = |field: &str| format!("frames[{i}].{field}");
        let intrinsics = f.intrinsics.to_intrinsics(&at("intrinsics"))?;
        let depth = cache.depth(root.join(&f.depth), &at("depth"))?;
        check_raster_size(&intrinsics, depth.width, depth.height, &at("depth"))?;
        let instance = cache.instance(root.join(&f.instance), &at("instance"))?;
        check_raster_size(&intrinsics, instance.width, instance.height, &at("instance"))?;
        let mut objects = Vec::with_capacity(f.objects.len());
        for (j, o) in f.objects.iter().enumerate() {
            let at = |field: &str| format!("frames[{i}].objects[{j}].{field}");
            if !(0.0..=1.0).contains(&o.score) {
                return Err(Error::schema(at("score"), "score must lie in [0, 1]"));
            }
            let [x0, y0, x1, y1] = o.prompt;
            objects.push(ObjectAnnotation {
                instance_id: o.instance_id,
                category: o.category.clone(),
                bbox: o.camera.to_box(&at("box"))?,
                box_world: o.world.to_box(&at("world"))?,
                prompt: Rect::new(x0, y0, x1, y1),
                score: o.score,
            });
        }
        frames.push(FrameRecord {
            source_index: f.source_index,
            intrinsics,
            pose: pose_of(&f.pose, &at("pose"))?,
            depth,
            instance,
            depth_file: f.depth.clone(),
            instance_file: f.instance.clone(),
            objects,
        });
    }
    Ok(SequenceClip { sequence_id: doc.sequence_id.clone(), scene_id: doc.scene_id.clone(), frames })
}

// ------------------------------------------------------------------- text

/// Canonical document text.
pub fn to_canonical_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("documents serialize");
    s.push('\n');
    s
}

/// Parses a document. Unknown fields are logged and skipped; errors carry
/// the JSON path of the offending field.
pub fn parse_document<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T> {
    let mut ignored = Vec::new();
    let mut de = serde_json::Deserializer::from_str(text);
    let value = {
        let mut record = |p: serde_ignored::Path<'_>| ignored.push(p.to_string());
        let de = serde_ignored::Deserializer::new(&mut de, &mut record);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::schema(format!("{origin}:{path}"), e.into_inner().to_string())
        })?
    };
    de.end().map_err(|e| Error::schema(origin, e.to_string()))?;
    for p in ignored {
        log::warn!("{origin}: ignoring unknown field `{p}`");
    }
    Ok(value)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

// ------------------------------------------------------------- sequences

/// Relative path of a clip document under the dataset root.
pub fn clip_path(clip_id: &str) -> String {
    format!("clips/{clip_id}.json")
}

/// Writes `root/clips/<id>.json`. Rasters are referenced, not copied, so
/// they must already exist under `root` (see [`write_raw_sequence`]).
pub fn write_sequence(clip: &SequenceClip, root: &Path) -> Result<ManifestEntry> {
    let rel = clip_path(&clip.sequence_id);
    write_bytes(&root.join(&rel), to_canonical_json(&sequence_doc(clip)).as_bytes())?;
    Ok(ManifestEntry {
        id: clip.sequence_id.clone(),
        scene_id: clip.scene_id.clone(),
        frame_count: clip.len(),
        path: rel,
        split: Split::Train,
    })
}

/// Dataset root for a document stored at `root/<dir>/<file>`.
fn root_of(path: &Path) -> PathBuf {
    path.parent().and_then(Path::parent).map(Path::to_path_buf).unwrap_or_default()
}

/// Reads a clip document; rasters resolve against the dataset root, the
/// parent of the document's directory.
pub fn read_sequence(path: &Path) -> Result<SequenceClip> {
    read_sequence_cached(path, &mut RasterCache::default())
}

pub fn read_sequence_cached(path: &Path, cache: &mut RasterCache) -> Result<SequenceClip> {
    let doc: SequenceDoc = parse_document(&read_text(path)?, &path.display().to_string())?;
    clip_from_doc(&doc, &root_of(path), cache)
}

pub fn raw_sequence_path(sequence_id: &str) -> String {
    format!("raw/{sequence_id}/sequence.json")
}

/// Writes rasters and `raw/<seq>/sequence.json`.
pub fn write_raw_sequence(raw: &RawSequence, root: &Path) -> Result<RawEntry> {
    let mut frames = Vec::with_capacity(raw.frames.len());
    for (i, (frame, pose)) in raw.frames.iter().zip(&raw.trajectory.poses).enumerate() {
        let (d, m) = (raw.depth_file(i), raw.instance_file(i));
        write_depth(&root.join(&d), &frame.depth)?;
        write_instance(&root.join(&m), &frame.instance)?;
        frames.push(RawFrameDoc { pose: pose.to_row_major(), depth: d, instance: m });
    }
    let doc = RawSequenceDoc {
        schema_version: SCHEMA_VERSION,
        sequence_id: raw.sequence_id.clone(),
        scene_id: raw.scene_id.clone(),
        room: raw.scene.room,
        background_categories: raw.scene.background_categories.clone(),
        objects: raw
            .scene
            .objects
            .iter()
            .map(|o| SceneObjectDoc { instance_id: o.instance_id, category: o.category.clone(), world: (&o.world_box).into() })
            .collect(),
        intrinsics: (&raw.intrinsics).into(),
        frames,
    };
    let rel = raw_sequence_path(&raw.sequence_id);
    write_bytes(&root.join(&rel), to_canonical_json(&doc).as_bytes())?;
    Ok(RawEntry { id: raw.sequence_id.clone(), scene_id: raw.scene_id.clone(), frame_count: raw.frames.len(), path: rel })
}

pub fn read_raw_sequence(path: &Path) -> Result<RawSequence> {
    let doc: RawSequenceDoc = parse_document(&read_text(path)?, &path.display().to_string())?;
    check_version(doc.schema_version)?;
    let root = root_of(path.parent().unwrap_or(Path::new("")));
    let intrinsics = doc.intrinsics.to_intrinsics("intrinsics")?;
    let mut objects = Vec::with_capacity(doc.objects.len());
    for (i, o) in doc.objects.iter().enumerate() {
        objects.push(SceneObject {
            instance_id: o.instance_id,
            category: o.category.clone(),
            world_box: o.world.to_box(&format!("objects[{i}].box"))?,
        });
    }
    let mut cache = RasterCache::default();
    let mut poses = Vec::with_capacity(doc.frames.len());
    let mut frames = Vec::with_capacity(doc.frames.len());
    for (i, f) in doc.frames.iter().enumerate() {
        let at = |field: &str| format!("frames[{i}].{field}");
        poses.push(pose_of(&f.pose, &at("pose"))?);
        let depth = cache.depth(root.join(&f.depth), &at("depth"))?;
        check_raster_size(&intrinsics, depth.width, depth.height, &at("depth"))?;
        let instance = cache.instance(root.join(&f.instance), &at("instance"))?;
        check_raster_size(&intrinsics, instance.width, instance.height, &at("instance"))?;
        frames.push(RawFrame { depth, instance });
    }
    Ok(RawSequence {
        sequence_id: doc.sequence_id,
        scene_id: doc.scene_id,
        scene: SceneSpec { room: doc.room, objects, background_categories: doc.background_categories },
        intrinsics,
        trajectory: TrajectorySpec { poses },
        frames,
    })
}

// -------------------------------------------------------------- manifest

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn write_manifest(manifest: &DatasetManifest, root: &Path) -> Result<()> {
    write_bytes(&root.join(MANIFEST_FILE), to_canonical_json(manifest).as_bytes())
}

/// Reads the manifest and checks ids are unique and referenced files exist.
pub fn read_manifest(root: &Path) -> Result<DatasetManifest> {
    let path = root.join(MANIFEST_FILE);
    let m: DatasetManifest = parse_document(&read_text(&path)?, &path.display().to_string())?;
    check_version(m.schema_version)?;
    let mut seen = BTreeSet::new();
    for (i, e) in m.sequences.iter().enumerate() {
        if !seen.insert(e.id.as_str()) {
            return Err(Error::schema(format!("sequences[{i}].id"), format!("duplicate id {}", e.id)));
        }
        if !root.join(&e.path).is_file() {
            return Err(Error::schema(format!("sequences[{i}].path"), format!("{} does not exist", e.path)));
        }
    }
    for (i, e) in m.raw.iter().enumerate() {
        if !root.join(&e.path).is_file() {
            return Err(Error::schema(format!("raw[{i}].path"), format!("{} does not exist", e.path)));
        }
    }
    Ok(m)
}

/// Reads every clip listed in the manifest, optionally restricted to a split.
pub fn read_dataset(root: &Path, split: Option<Split>) -> Result<Vec<SequenceClip>> {
    let manifest = read_manifest(root)?;
    let mut cache = RasterCache::default();
    manifest
        .sequences
        .iter()
        .filter(|e| split.is_none_or(|s| s == e.split))
        .map(|e| read_sequence_cached(&root.join(&e.path), &mut cache))
        .collect()
}

/// Deterministic scene-level split. Duplicate ids collapse; with at least
/// two scenes both sides are non-empty.
pub fn split_scenes(scene_ids: &[String], val_fraction: f64, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Config(format!("val_fraction must be in (0, 1), got {val_fraction}")));
    }
    let mut ids: Vec<String> = scene_ids.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let n = ids.len();
    if n < 2 {
        return Ok((ids, Vec::new()));
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1);
    let mut val = ids.split_off(n - n_val);
    ids.sort();
    val.sort();
    Ok((ids, val))
}

// ----------------------------------------------------------- predictions

/// One detection, boxes in the camera frame of their frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRecord {
    pub sequence_id: String,
    pub frame_index: usize,
    pub instance_id: u32,
    pub category: Option<String>,
    pub bbox: OrientedBox3D,
    pub score: f64,
}

#[derive(Serialize, Deserialize)]
struct PredictionDoc {
    sequence_id: String,
    frame_index: usize,
    instance_id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    category: Option<String>,
    camera: BoxDoc,
    score: f64,
}

/// One compact JSON object per line.
pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        let doc = PredictionDoc {
            sequence_id: r.sequence_id.clone(),
            frame_index: r.frame_index,
            instance_id: r.instance_id,
            category: r.category.clone(),
            camera: (&r.bbox).into(),
            score: r.score,
        };
        out.push_str(&serde_json::to_string(&doc).expect("predictions serialize"));
        out.push('\n');
    }
    write_bytes(path, out.as_bytes())
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let origin = format!("{}:{}", path.display(), n + 1);
        let d: PredictionDoc = parse_document(line, &origin)?;
        if !(0.0..=1.0).contains(&d.score) {
            return Err(Error::schema(format!("{origin}:score"), "score must lie in [0, 1]"));
        }
        out.push(PredictionRecord {
            sequence_id: d.sequence_id,
            frame_index: d.frame_index,
            instance_id: d.instance_id,
            category: d.category,
            bbox: d.camera.to_box(&format!("{origin}:box"))?,
            score: d.score,
        });
    }
    Ok(out)
}

/// Ground truth of a clip as predictions with the GT score.
pub fn gt_as_predictions(clip: &SequenceClip) -> Vec<PredictionRecord> {
    clip.frames
        .iter()
        .enumerate()
        .flat_map(|(t, f)| {
            f.objects.iter().map(move |o| PredictionRecord {
                sequence_id: clip.sequence_id.clone(),
                frame_index: t,
                instance_id: o.instance_id,
                category: Some(o.category.clone()),
                bbox: o.bbox,
                score: o.score,
            })
        })
        .collect()
}
