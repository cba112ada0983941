#![allow(dead_code)]

use rand::Rng;
use seqbox::clip::{FrameRecord, SequenceClip};
use seqbox::geometry::{CameraIntrinsics, OrientedBox3D, RigidTransform, Vec3};
use seqbox::scene::{render_objects, SceneObject, SceneSpec};
use std::sync::Arc;

/// Monte-Carlo IoU: jittered stratified samples (`n³` of them) inside the
/// smaller box, tested against the other box with a plain local-frame
/// inequality check.
pub fn mc_iou(a: &OrientedBox3D, b: &OrientedBox3D, n: usize, rng: &mut impl Rng) -> f64 {
    let (va, vb) = (a.dims.x * a.dims.y * a.dims.z, b.dims.x * b.dims.y * b.dims.z);
    if va <= 0.0 || vb <= 0.0 {
        return 0.0;
    }
    let (small, other) = if va <= vb { (a, b) } else { (b, a) };
    let rt = other.rotation.transpose();
    let mut hits = 0usize;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let mut f = |c: usize| (c as f64 + rng.random::<f64>()) / n as f64 - 0.5;
                let local = Vec3::new(f(i) * small.dims.x, f(j) * small.dims.y, f(k) * small.dims.z);
                let p = small.rotation.mul_vec(local) + small.center;
                let q = rt.mul_vec(p - other.center);
                if q.x.abs() <= other.dims.x / 2.0 && q.y.abs() <= other.dims.y / 2.0 && q.z.abs() <= other.dims.z / 2.0 {
                    hits += 1;
                }
            }
        }
    }
    let inter = hits as f64 / (n * n * n) as f64 * va.min(vb);
    inter / (va + vb - inter)
}

/// Brute-force symmetric Chamfer with Euclidean distances.
pub fn brute_chamfer(a: &[Vec3], b: &[Vec3]) -> f64 {
    let directed = |x: &[Vec3], y: &[Vec3]| {
        x.iter().map(|p| y.iter().map(|q| (*p - *q).norm()).fold(f64::INFINITY, f64::min)).sum::<f64>() / x.len() as f64
    };
    0.5 * (directed(a, b) + directed(b, a))
}

pub fn k() -> CameraIntrinsics {
    CameraIntrinsics::default()
}

pub fn cuboid(id: u32, center: Vec3, dims: Vec3) -> SceneObject {
    SceneObject { instance_id: id, category: "box".into(), world_box: OrientedBox3D::axis_aligned(center, dims) }
}

pub fn frame(objects: &[SceneObject], pose: RigidTransform, index: usize) -> FrameRecord {
    let refs: Vec<&SceneObject> = objects.iter().collect();
    let (depth, instance) = render_objects(&refs, &pose, &k());
    FrameRecord {
        source_index: index,
        intrinsics: k(),
        pose,
        depth: Arc::new(depth),
        instance: Arc::new(instance),
        depth_file: format!("d{index}"),
        instance_file: format!("i{index}"),
        objects: Vec::new(),
    }
}

/// Unit cube 5 m ahead of a camera at the origin; its back corners hide
/// behind its own front face, so four corners are behind from the start.
pub fn target() -> SceneObject {
    cuboid(1, Vec3::new(0.0, 0.0, 5.0), Vec3::new(1.0, 1.0, 1.0))
}

/// Small blocker 3 m ahead on the ray through front corner `(sx, sy)`.
pub fn blocker(id: u32, sx: f64, sy: f64) -> SceneObject {
    let (u, v) = ((64.0 + sx * 110.0 * 0.5 / 4.5).round(), (64.0 + sy * 110.0 * 0.5 / 4.5).round());
    let (x, y) = ((u - 64.0) / 110.0 * 3.0, (v - 64.0) / 110.0 * 3.0);
    cuboid(id, Vec3::new(x, y, 3.0), Vec3::new(0.1, 0.1, 0.1))
}

/// Hand count: a corner is behind when its rounded pixel shows something
/// nearer than the corner by more than the margin.
pub fn oracle_behind(b: &OrientedBox3D, f: &FrameRecord) -> usize {
    b.corners()
        .iter()
        .filter(|c| {
            let (u, v) = ((110.0 * c.x / c.z + 64.0).round(), (110.0 * c.y / c.z + 64.0).round());
            (0.0..128.0).contains(&u) && (0.0..128.0).contains(&v) && c.z > f.depth.get(u as u32, v as u32) as f64 + 0.02
        })
        .count()
}

/// Camera sliding along +x past a fixed object set.
pub fn sliding_clip(objects: &[SceneObject], n: usize, step: f64) -> SequenceClip {
    SequenceClip {
        sequence_id: "slide".into(),
        scene_id: "slide".into(),
        frames: (0..n)
            .map(|i| frame(objects, RigidTransform::from_translation(Vec3::new(step * i as f64, 0.0, 0.0)), i))
            .collect(),
    }
}

pub fn spec(objects: Vec<SceneObject>) -> SceneSpec {
    SceneSpec { room: [10.0, 10.0, 10.0], objects, background_categories: vec!["wall".into(), "floor".into()] }
}

