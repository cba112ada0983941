//! Deterministic synthetic recorder: cuboid rooms, random-walk camera
//! trajectories and analytic ray-cast depth / instance maps.
//!
//! The world frame is z-up with the floor at `z = 0` and the room spanning
//! `[0, room.x] × [0, room.y] × [0, room.z]`. Object boxes use the same
//! `(w, h, l)` convention as camera-frame boxes: `h` is the vertical extent,
//! so a world box rotation is `Rz(heading) · UPRIGHT`.

use crate::clip::{FrameRecord, SequenceClip};
use crate::error::{Error, Result};
use crate::geometry::{iou3d, CameraIntrinsics, DepthMap, Mask2D, Mat3, OrientedBox3D, RigidTransform, Vec3, NO_HIT};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Box axes (x, y, z) → world (x, −z, y): the box y axis points down.
pub fn upright() -> Mat3 {
    Mat3::from_cols(Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 0.0, -1.0), Vec3::new(0.0, 1.0, 0.0))
}

/// Camera axes (right, down, forward) → world for a level camera facing +x.
fn camera_base() -> Mat3 {
    Mat3::from_cols(Vec3::new(0.0, -1.0, 0.0), Vec3::new(0.0, 0.0, -1.0), Vec3::new(1.0, 0.0, 0.0))
}

/// Camera-to-world pose at `position` with heading `yaw` (about world z,
/// 0 = facing +x) and `pitch` (negative looks down).
pub fn camera_pose(position: Vec3, yaw: f64, pitch: f64) -> RigidTransform {
    RigidTransform::new(Mat3::rot_z(yaw) * camera_base() * Mat3::rot_x(pitch), position)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    /// Room extents (x, y, z) in meters.
    pub room: [f64; 3],
    pub n_objects: usize,
    pub width_range: [f64; 2],
    pub height_range: [f64; 2],
    pub length_range: [f64; 2],
    pub foreground_categories: Vec<String>,
    /// Categories of the structural objects added to every scene.
    pub background_categories: Vec<String>,
    /// Gap between object bottoms and the floor surface.
    pub floor_clearance: f64,
    pub wall_margin: f64,
    /// Minimum free gap between foreground objects.
    pub object_gap: f64,
    pub placement_attempts: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            room: [6.0, 6.0, 3.0],
            n_objects: 6,
            width_range: [0.2, 1.6],
            height_range: [0.2, 1.2],
            length_range: [0.2, 1.6],
            foreground_categories: ["chair", "table", "sofa", "cabinet", "bed", "lamp", "box", "plant"]
                .map(String::from)
                .to_vec(),
            background_categories: ["floor", "wall", "ceiling", "void"].map(String::from).to_vec(),
            floor_clearance: 0.05,
            wall_margin: 0.1,
            object_gap: 0.05,
            placement_attempts: 2000,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let ranges = [self.width_range, self.height_range, self.length_range];
        if self.room.iter().any(|r| r.is_nan() || *r <= 0.0) {
            return Err(Error::Config("room extents must be positive".into()));
        }
        if ranges.iter().any(|r| !(r[0] > 0.0 && r[0] <= r[1])) {
            return Err(Error::Config("dimension ranges must satisfy 0 < min <= max".into()));
        }
        if self.n_objects > 0 && self.foreground_categories.is_empty() {
            return Err(Error::Config("foreground_categories is empty".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub intrinsics: CameraIntrinsics,
    /// Camera height above the floor in meters.
    pub height: f64,
    pub pitch_deg: f64,
    pub max_step: f64,
    pub max_turn_deg: f64,
    /// Minimum distance between the camera and walls or object footprints.
    pub clearance: f64,
    pub guarantee_visibility: bool,
    pub visibility_retries: usize,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            intrinsics: CameraIntrinsics::default(),
            height: 1.5,
            pitch_deg: -15.0,
            max_step: 0.25,
            max_turn_deg: 15.0,
            clearance: 0.3,
            guarantee_visibility: false,
            visibility_retries: 20,
        }
    }
}

impl CameraConfig {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate().map_err(|e| Error::Config(e.to_string()))?;
        if !(self.max_step > 0.0 && self.max_turn_deg >= 0.0 && self.height > 0.0 && self.clearance >= 0.0) {
            return Err(Error::Config("camera step, turn, height and clearance must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneObject {
    pub instance_id: u32,
    pub category: String,
    /// Global box in world coordinates.
    pub world_box: OrientedBox3D,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub room: [f64; 3],
    pub objects: Vec<SceneObject>,
    pub background_categories: Vec<String>,
}

impl SceneSpec {
    pub fn object(&self, id: u32) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.instance_id == id)
    }

    pub fn is_background(&self, category: &str) -> bool {
        self.background_categories.iter().any(|c| c == category)
    }

    pub fn foreground(&self) -> impl Iterator<Item = &SceneObject> {
        self.objects.iter().filter(|o| !self.is_background(&o.category))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySpec {
    /// Camera-to-world pose per frame.
    pub poses: Vec<RigidTransform>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawFrame {
    pub depth: Arc<DepthMap>,
    pub instance: Arc<Mask2D>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawSequence {
    pub sequence_id: String,
    pub scene_id: String,
    pub scene: SceneSpec,
    pub intrinsics: CameraIntrinsics,
    pub trajectory: TrajectorySpec,
    pub frames: Vec<RawFrame>,
}

impl RawSequence {
    pub fn depth_file(&self, index: usize) -> String {
        format!("raw/{}/depth_{index:05}.bin", self.sequence_id)
    }

    pub fn instance_file(&self, index: usize) -> String {
        format!("raw/{}/instance_{index:05}.bin", self.sequence_id)
    }
}

fn sample(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

/// Builds a scene: `n_objects` non-overlapping foreground boxes resting on
/// the floor plus floor, wall and ceiling slabs in the reserved categories.
pub fn generate_scene(config: &SceneConfig, seed: u64) -> Result<SceneSpec> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [rx, ry, rz] = config.room;
    let mut objects: Vec<SceneObject> = Vec::with_capacity(config.n_objects + 6);
    let mut attempts = 0;
    while objects.len() < config.n_objects {
        attempts += 1;
        if attempts > config.placement_attempts * config.n_objects.max(1) {
            return Err(Error::PlacementFailure { attempts: attempts - 1 });
        }
        let (w, h, l) = (sample(&mut rng, config.width_range), sample(&mut rng, config.height_range), sample(&mut rng, config.length_range));
        let heading = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let reach = 0.5 * (w * w + l * l).sqrt() + config.wall_margin;
        if 2.0 * reach >= rx.min(ry) || h + config.floor_clearance > rz {
            continue;
        }
        let (cx, cy) = (rng.random_range(reach..rx - reach), rng.random_range(reach..ry - reach));
        let category = config.foreground_categories[rng.random_range(0..config.foreground_categories.len())].clone();
        let candidate = OrientedBox3D::new(
            Vec3::new(cx, cy, config.floor_clearance + h / 2.0),
            Vec3::new(w, h, l),
            Mat3::rot_z(heading) * upright(),
        );
        let padded = candidate.dilated(config.object_gap / 2.0);
        if objects.iter().any(|o| iou3d(&o.world_box.dilated(config.object_gap / 2.0), &padded) > 0.0) {
            continue;
        }
        objects.push(SceneObject { instance_id: objects.len() as u32 + 1, category, world_box: candidate });
    }

    let t = 0.1;
    let bg = |name: &str| {
        config.background_categories.iter().find(|c| c.as_str() == name).cloned()
    };
    let slab = |c: Vec3, w: f64, h: f64, l: f64| OrientedBox3D::new(c, Vec3::new(w, h, l), upright());
    let mut structure = Vec::new();
    if let Some(cat) = bg("floor") {
        structure.push((cat, slab(Vec3::new(rx / 2.0, ry / 2.0, -t / 2.0), rx + 2.0 * t, t, ry + 2.0 * t)));
    }
    if let Some(cat) = bg("ceiling") {
        structure.push((cat, slab(Vec3::new(rx / 2.0, ry / 2.0, rz + t / 2.0), rx + 2.0 * t, t, ry + 2.0 * t)));
    }
    if let Some(cat) = bg("wall") {
        structure.push((cat.clone(), slab(Vec3::new(-t / 2.0, ry / 2.0, rz / 2.0), t, rz, ry + 2.0 * t)));
        structure.push((cat.clone(), slab(Vec3::new(rx + t / 2.0, ry / 2.0, rz / 2.0), t, rz, ry + 2.0 * t)));
        structure.push((cat.clone(), slab(Vec3::new(rx / 2.0, -t / 2.0, rz / 2.0), rx + 2.0 * t, rz, t)));
        structure.push((cat, slab(Vec3::new(rx / 2.0, ry + t / 2.0, rz / 2.0), rx + 2.0 * t, rz, t)));
    }
    for (category, world_box) in structure {
        objects.push(SceneObject { instance_id: objects.len() as u32 + 1, category, world_box });
    }
    Ok(SceneSpec { room: config.room, objects, background_categories: config.background_categories.clone() })
}

fn position_is_free(scene: &SceneSpec, p: Vec3, clearance: f64) -> bool {
    let [rx, ry, _] = scene.room;
    if p.x < clearance || p.y < clearance || p.x > rx - clearance || p.y > ry - clearance {
        return false;
    }
    scene.foreground().all(|o| {
        let probe = Vec3::new(p.x, p.y, o.world_box.center.z);
        !o.world_box.contains(probe, clearance)
    })
}

/// Random walk of `n_steps` poses at fixed height. Each step turns by at
/// most `max_turn_deg` and moves at most `max_step`; blocked moves are
/// resampled and, failing that, replaced by a turn in place.
pub fn random_walk(scene: &SceneSpec, camera: &CameraConfig, n_steps: usize, seed: u64) -> Result<TrajectorySpec> {
    if n_steps == 0 {
        return Err(Error::Config("n_steps must be >= 1".into()));
    }
    camera.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [rx, ry, _] = scene.room;
    let pitch = camera.pitch_deg.to_radians();
    let max_turn = camera.max_turn_deg.to_radians();
    let mut pos = None;
    for _ in 0..10_000 {
        let p = Vec3::new(rng.random_range(0.0..rx), rng.random_range(0.0..ry), camera.height);
        if position_is_free(scene, p, camera.clearance) {
            pos = Some(p);
            break;
        }
    }
    let mut pos = pos.ok_or_else(|| Error::Config("no free camera position in the room".into()))?;
    let mut yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let mut poses = vec![camera_pose(pos, yaw, pitch)];
    while poses.len() < n_steps {
        let mut moved = false;
        for _ in 0..32 {
            let turn = if max_turn > 0.0 { rng.random_range(-max_turn..=max_turn) } else { 0.0 };
            let step = rng.random_range(0.5..=1.0) * camera.max_step;
            let heading = yaw + turn;
            let next = Vec3::new(pos.x + step * heading.cos(), pos.y + step * heading.sin(), pos.z);
            if position_is_free(scene, next, camera.clearance) {
                pos = next;
                yaw = heading;
                moved = true;
                break;
            }
        }
        if !moved {
            yaw += max_turn;
        }
        poses.push(camera_pose(pos, yaw, pitch));
    }
    Ok(TrajectorySpec { poses })
}

/// Ray parameter of the first hit of `origin + t·dir` (t > 0) with a box.
fn ray_box(origin: Vec3, dir: Vec3, b: &OrientedBox3D) -> Option<f64> {
    let rt = b.rotation.transpose();
    let o = rt.mul_vec(origin - b.center).to_array();
    let d = rt.mul_vec(dir).to_array();
    let half = b.dims.scale(0.5).to_array();
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for a in 0..3 {
        if d[a].abs() < 1e-15 {
            if o[a].abs() > half[a] {
                return None;
            }
        } else {
            let (mut lo, mut hi) = ((-half[a] - o[a]) / d[a], (half[a] - o[a]) / d[a]);
            if lo > hi {
                std::mem::swap(&mut lo, &mut hi);
            }
            t0 = t0.max(lo);
            t1 = t1.min(hi);
        }
    }
    if t1 < t0 {
        return None;
    }
    if t0 > 0.0 {
        Some(t0)
    } else if t1 > 0.0 {
        Some(t1)
    } else {
        None
    }
}

/// Ray casts `objects` at every pixel center. Depth is measured along the
/// camera z axis; pixels without a hit get [`NO_HIT`] and id 0.
pub fn render_objects(objects: &[&SceneObject], pose: &RigidTransform, k: &CameraIntrinsics) -> (DepthMap, Mask2D) {
    let mut depth = DepthMap::filled(k.width, k.height, NO_HIT);
    let mut mask = Mask2D::filled(k.width, k.height, 0);
    for j in 0..k.height {
        for i in 0..k.width {
            // camera ray has unit z, so the ray parameter equals the depth
            let dir = pose.rotation.mul_vec(k.ray(i, j));
            let mut best = (f64::INFINITY, 0u32);
            for o in objects {
                if let Some(t) = ray_box(pose.translation, dir, &o.world_box) {
                    if t < best.0 {
                        best = (t, o.instance_id);
                    }
                }
            }
            if best.1 != 0 {
                depth.set(i, j, best.0 as f32);
                mask.set(i, j, best.1);
            }
        }
    }
    (depth, mask)
}

pub fn render_frame(scene: &SceneSpec, pose: &RigidTransform, k: &CameraIntrinsics) -> (DepthMap, Mask2D) {
    let all: Vec<&SceneObject> = scene.objects.iter().collect();
    render_objects(&all, pose, k)
}

/// True if the center of every foreground object projects into the image
/// in at least one pose.
pub fn trajectory_sees_all(scene: &SceneSpec, trajectory: &TrajectorySpec, k: &CameraIntrinsics) -> bool {
    scene.foreground().all(|o| {
        trajectory.poses.iter().any(|pose| {
            let c = pose.inverse().apply(o.world_box.center);
            crate::geometry::project(c, k).ok().and_then(|(u, v, _)| k.pixel_of(u, v)).is_some()
        })
    })
}

/// Scene, walk and rendered frames for one recorded sequence.
pub fn record_sequence(
    sequence_id: &str,
    scene_id: &str,
    scene: &SceneSpec,
    camera: &CameraConfig,
    n_frames: usize,
    seed: u64,
) -> Result<RawSequence> {
    let mut trajectory = random_walk(scene, camera, n_frames, seed)?;
    if camera.guarantee_visibility {
        let mut attempt = 1;
        while !trajectory_sees_all(scene, &trajectory, &camera.intrinsics) && attempt <= camera.visibility_retries {
            trajectory = random_walk(scene, camera, n_frames, seed.wrapping_add(attempt as u64 * 0x9e37_79b9))?;
            attempt += 1;
        }
        if !trajectory_sees_all(scene, &trajectory, &camera.intrinsics) {
            log::warn!("{sequence_id}: no trajectory sees every object after {} retries", camera.visibility_retries);
        }
    }
    let k = camera.intrinsics;
    let frames = trajectory
        .poses
        .par_iter()
        .map(|pose| {
            let (depth, instance) = render_frame(scene, pose, &k);
            RawFrame { depth: Arc::new(depth), instance: Arc::new(instance) }
        })
        .collect();
    Ok(RawSequence {
        sequence_id: sequence_id.to_string(),
        scene_id: scene_id.to_string(),
        scene: scene.clone(),
        intrinsics: k,
        trajectory,
        frames,
    })
}

/// Start frames of the full-length clips of an `n_frames` sequence.
pub fn clip_starts(n_frames: usize, clip_len: usize, stride: usize) -> Result<Vec<usize>> {
    if clip_len == 0 || stride == 0 {
        return Err(Error::Config("clip_len and stride must be >= 1".into()));
    }
    if stride > clip_len {
        return Err(Error::Config(format!("stride {stride} exceeds clip_len {clip_len}")));
    }
    if n_frames < clip_len {
        return Ok(Vec::new());
    }
    Ok((0..=n_frames - clip_len).step_by(stride).collect())
}

/// Cuts a recorded sequence into overlapping fixed-length clips. Frames keep
/// their world poses and carry no annotations yet.
pub fn segment_clips(raw: &RawSequence, clip_len: usize, stride: usize) -> Result<Vec<SequenceClip>> {
    let starts = clip_starts(raw.frames.len(), clip_len, stride)?;
    Ok(starts
        .into_iter()
        .map(|s| SequenceClip {
            sequence_id: format!("{}_c{s:04}", raw.sequence_id),
            scene_id: raw.scene_id.clone(),
            frames: (s..s + clip_len)
                .map(|i| FrameRecord {
                    source_index: i,
                    intrinsics: raw.intrinsics,
                    pose: raw.trajectory.poses[i],
                    depth: raw.frames[i].depth.clone(),
                    instance: raw.frames[i].instance.clone(),
                    depth_file: raw.depth_file(i),
                    instance_file: raw.instance_file(i),
                    objects: Vec::new(),
                })
                .collect(),
        })
        .collect())
}
