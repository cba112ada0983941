//! Ground-truth filtering and temporally consistent box adaptation.
//!
//! A clip is annotated in two passes. [`adapt_boxes`] walks the frames in
//! order, runs one [`AdaptationState`] per foreground object and emits
//! world-frame boxes for frames where the emitted box passes the four
//! filters. [`rereference`] then moves poses and world boxes into the frame
//! of the first camera.

use crate::clip::{FrameRecord, ObjectAnnotation, SequenceClip, GT_SCORE};
use crate::error::{Error, Result};
use crate::geometry::{project, CameraIntrinsics, DepthMap, Mask2D, OrientedBox3D, PointCloud3D, Rect, Vec3};
use crate::scene::{render_objects, SceneObject, SceneSpec};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotationConfig {
    /// Objects whose center is farther than this (meters) are removed.
    pub depth_max: f64,
    /// Minimum visible pixels inside the projected box.
    pub min_pixels: usize,
    /// Slack (meters) before a corner counts as behind its pixel.
    pub behind_margin: f64,
    /// An object is dropped when more corners than this are behind.
    pub max_behind_vertices: usize,
    /// Visible ÷ unoccluded pixel ratio needed to count as fully visible.
    pub full_visible_ratio: f64,
    /// Accumulated-box volume ÷ global volume at which adaptation stops.
    pub converge_ratio: f64,
    /// Pixel grid stride used when back-projecting masks.
    pub point_stride: u32,
}

impl Default for AnnotationConfig {
    fn default() -> Self {
        Self {
            depth_max: 10.0,
            min_pixels: 100,
            behind_margin: 0.02,
            max_behind_vertices: 5,
            full_visible_ratio: 0.95,
            converge_ratio: 0.9,
            point_stride: 2,
        }
    }
}

impl AnnotationConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.depth_max > 0.0
            && self.min_pixels >= 1
            && self.behind_margin >= 0.0
            && self.max_behind_vertices < 8
            && (0.0..=1.0).contains(&self.full_visible_ratio)
            && self.converge_ratio > 0.0
            && self.converge_ratio <= 1.0
            && self.point_stride >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid annotation config {self:?}")))
        }
    }
}

pub fn filter_semantic(objects: &[SceneObject], background: &[String]) -> Vec<SceneObject> {
    objects.iter().filter(|o| !background.contains(&o.category)).cloned().collect()
}

/// Keeps a camera-frame box unless it lies entirely behind the camera or its
/// center is beyond `depth_max`.
pub fn passes_frustum_depth(cam_box: &OrientedBox3D, depth_max: f64) -> bool {
    let behind = cam_box.corners().iter().all(|c| c.z <= 0.0);
    !behind && cam_box.center.z <= depth_max
}

/// Frustum/depth filter for world boxes seen from camera-to-world `pose`.
pub fn filter_frustum_depth(objects: &[SceneObject], pose: &crate::geometry::RigidTransform, depth_max: f64) -> Vec<SceneObject> {
    let to_cam = pose.inverse();
    objects.iter().filter(|o| passes_frustum_depth(&o.world_box.transformed(&to_cam), depth_max)).cloned().collect()
}

/// Pixel rectangle (inclusive indices) covered by the projection of a box,
/// clamped to the image. A box reaching behind the camera covers the whole
/// image.
fn projected_pixel_rect(cam_box: &OrientedBox3D, k: &CameraIntrinsics) -> Option<(u32, u32, u32, u32)> {
    let (w, h) = (k.width as f64, k.height as f64);
    let mut r = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for c in cam_box.corners() {
        match project(c, k) {
            Ok((u, v, _)) => r = (r.0.min(u), r.1.min(v), r.2.max(u), r.3.max(v)),
            Err(_) => {
                r = (0.0, 0.0, w - 1.0, h - 1.0);
                break;
            }
        }
    }
    let (i0, j0) = (r.0.round().max(0.0), r.1.round().max(0.0));
    let (i1, j1) = (r.2.round().min(w - 1.0), r.3.round().min(h - 1.0));
    (i0 <= i1 && j0 <= j1).then_some((i0 as u32, j0 as u32, i1 as u32, j1 as u32))
}

/// Number of pixels labelled `instance_id` inside the box's projected rect.
pub fn visible_pixel_count(instance_id: u32, cam_box: &OrientedBox3D, mask: &Mask2D, k: &CameraIntrinsics) -> usize {
    let Some((i0, j0, i1, j1)) = projected_pixel_rect(cam_box, k) else {
        return 0;
    };
    (j0..=j1).flat_map(|j| (i0..=i1).map(move |i| (i, j))).filter(|&(i, j)| mask.get(i, j) == instance_id).count()
}

pub fn filter_occlusion_pixels(instance_id: u32, cam_box: &OrientedBox3D, mask: &Mask2D, k: &CameraIntrinsics, min_pixels: usize) -> bool {
    visible_pixel_count(instance_id, cam_box, mask, k) >= min_pixels
}

/// Corners whose projected pixel is in the image and strictly farther than
/// the observed depth plus `margin`.
pub fn behind_vertex_count(cam_box: &OrientedBox3D, depth: &DepthMap, k: &CameraIntrinsics, margin: f64) -> usize {
    cam_box
        .corners()
        .iter()
        .filter(|c| {
            let Ok((u, v, z)) = project(**c, k) else {
                return false;
            };
            match k.pixel_of(u, v) {
                Some((i, j)) => z > depth.get(i, j) as f64 + margin,
                None => false,
            }
        })
        .count()
}

pub fn filter_vertex_depth(cam_box: &OrientedBox3D, depth: &DepthMap, k: &CameraIntrinsics, cfg: &AnnotationConfig) -> bool {
    behind_vertex_count(cam_box, depth, k, cfg.behind_margin) <= cfg.max_behind_vertices
}

/// All four filters, in order, for one candidate box in one frame.
pub fn passes_filters(
    instance_id: u32,
    category: &str,
    cam_box: &OrientedBox3D,
    frame: &FrameRecord,
    background: &[String],
    cfg: &AnnotationConfig,
) -> bool {
    !background.iter().any(|b| b == category)
        && passes_frustum_depth(cam_box, cfg.depth_max)
        && filter_occlusion_pixels(instance_id, cam_box, &frame.instance, &frame.intrinsics, cfg.min_pixels)
        && filter_vertex_depth(cam_box, &frame.depth, &frame.intrinsics, cfg)
}

/// Whether an object is unoccluded and untruncated in a frame: every corner
/// projects into the image, no corner is hidden by a *different* surface,
/// and the visible pixels are at least `full_visible_ratio` of what the
/// object covers when rendered alone.
pub fn is_fully_visible(object: &SceneObject, frame: &FrameRecord, cfg: &AnnotationConfig) -> bool {
    let k = &frame.intrinsics;
    let cam_box = object.world_box.transformed(&frame.pose.inverse());
    for c in cam_box.corners() {
        let Ok((u, v, z)) = project(c, k) else {
            return false;
        };
        let Some((i, j)) = k.pixel_of(u, v) else {
            return false;
        };
        // the object's own far faces hide some corners; those don't count
        let id = frame.instance.get(i, j);
        if id != object.instance_id && (frame.depth.get(i, j) as f64) < z - cfg.behind_margin {
            return false;
        }
    }
    let visible = frame.instance.count(object.instance_id);
    let (_, solo) = render_objects(&[object], &frame.pose, k);
    let alone = solo.count(object.instance_id);
    alone > 0 && visible as f64 >= cfg.full_visible_ratio * alone as f64
}

/// World points of the object's masked pixels on a `stride` grid.
pub fn backproject_mask(instance_id: u32, frame: &FrameRecord, stride: u32) -> Vec<Vec3> {
    let k = &frame.intrinsics;
    let mut out = Vec::new();
    for j in (0..k.height).step_by(stride as usize) {
        for i in (0..k.width).step_by(stride as usize) {
            if frame.instance.get(i, j) != instance_id {
                continue;
            }
            let d = frame.depth.get(i, j) as f64;
            if let Ok(p) = crate::geometry::backproject(i as f64, j as f64, d, k) {
                out.push(frame.pose.apply(p));
            }
        }
    }
    out
}

/// Tight rectangle around the visible pixels of `instance_id`, in pixel
/// edges (a pixel `i` spans `[i − 0.5, i + 0.5]`).
pub fn prompt_rect(instance_id: u32, mask: &Mask2D) -> Option<Rect> {
    let mut r: Option<Rect> = None;
    for (i, j) in mask.pixels_of(instance_id) {
        let (x, y) = (i as f64, j as f64);
        r = Some(match r {
            None => Rect::new(x - 0.5, y - 0.5, x + 0.5, y + 0.5),
            Some(r) => Rect::new(r.x0.min(x - 0.5), r.y0.min(y - 0.5), r.x1.max(x + 0.5), r.y1.max(y + 0.5)),
        });
    }
    r
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Not yet seen in this clip.
    Unseen,
    /// Fully visible at first appearance; carries the global box.
    FullFromStart,
    /// Partially visible; the box grows with accumulated observations.
    Accumulating,
    /// Accumulated observations cover the object; carries the global box.
    Converged,
    /// Lost after a full-visibility start; never annotated again.
    Dropped,
}

/// Per-object state of the adaptation state machine, in world coordinates.
#[derive(Clone, Debug)]
pub struct AdaptationState {
    pub instance_id: u32,
    pub phase: Phase,
    /// Accumulated back-projected points.
    pub cloud: PointCloud3D,
    /// Current adapted box, once the object has been seen.
    pub adapted: Option<OrientedBox3D>,
    pub global: OrientedBox3D,
    // running extents of `cloud` in the global box frame
    lo: [f64; 3],
    hi: [f64; 3],
    warned: bool,
}

impl AdaptationState {
    pub fn new(instance_id: u32, global: OrientedBox3D) -> Self {
        Self {
            instance_id,
            phase: Phase::Unseen,
            cloud: PointCloud3D::default(),
            adapted: None,
            global,
            lo: [f64::INFINITY; 3],
            hi: [f64::NEG_INFINITY; 3],
            warned: false,
        }
    }

    /// Adds points and refreshes the adapted box: the tight fit under the
    /// global rotation, clipped to the global extents.
    fn accumulate(&mut self, points: Vec<Vec3>) {
        let half = self.global.dims.scale(0.5).to_array();
        for p in &points {
            let q = self.global.to_local(*p).to_array();
            for ((lo, hi), v) in self.lo.iter_mut().zip(&mut self.hi).zip(q) {
                *lo = lo.min(v);
                *hi = hi.max(v);
            }
        }
        self.cloud.extend(points);
        if self.cloud.is_empty() {
            return;
        }
        let lo: [f64; 3] = std::array::from_fn(|a| self.lo[a].clamp(-half[a], half[a]));
        let hi: [f64; 3] = std::array::from_fn(|a| self.hi[a].clamp(-half[a], half[a]));
        let mid = Vec3::new((lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0, (lo[2] + hi[2]) / 2.0);
        self.adapted = Some(OrientedBox3D {
            center: self.global.center + self.global.rotation.mul_vec(mid),
            dims: Vec3::new(hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]),
            rotation: self.global.rotation,
        });
    }

    /// Advances one frame. Returns the world box this object carries in the
    /// frame, or `None` when it is absent or no longer tracked.
    pub fn observe(&mut self, object: &SceneObject, frame: &FrameRecord, cfg: &AnnotationConfig) -> Option<OrientedBox3D> {
        let present = frame.instance.data.contains(&self.instance_id);
        match self.phase {
            Phase::Unseen if present => {
                if is_fully_visible(object, frame, cfg) {
                    self.phase = Phase::FullFromStart;
                    self.adapted = Some(self.global);
                } else {
                    self.phase = Phase::Accumulating;
                    self.step_accumulating(frame, cfg);
                }
                self.adapted
            }
            Phase::Unseen => None,
            Phase::FullFromStart | Phase::Converged if present => Some(self.global),
            Phase::FullFromStart => {
                self.phase = Phase::Dropped;
                None
            }
            Phase::Converged => None,
            Phase::Accumulating if present => {
                self.step_accumulating(frame, cfg);
                self.adapted
            }
            Phase::Accumulating => None,
            Phase::Dropped => {
                if present && !self.warned {
                    log::warn!("object {} reappears after being dropped; it stays unannotated", self.instance_id);
                    self.warned = true;
                }
                None
            }
        }
    }

    fn step_accumulating(&mut self, frame: &FrameRecord, cfg: &AnnotationConfig) {
        self.accumulate(backproject_mask(self.instance_id, frame, cfg.point_stride));
        if let Some(b) = self.adapted {
            if b.volume() >= cfg.converge_ratio * self.global.volume() {
                self.phase = Phase::Converged;
                self.adapted = Some(self.global);
            }
        }
    }
}

/// State of one object after a frame, for inspection and tests.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceEntry {
    pub instance_id: u32,
    pub phase: Phase,
    pub adapted: Option<OrientedBox3D>,
    pub emitted: bool,
}

/// Runs adaptation and filtering over a clip whose frames carry world
/// poses. Annotations keep `box_world` in the scene frame; see
/// [`rereference`].
pub fn adapt_boxes(clip: &SequenceClip, scene: &SceneSpec, cfg: &AnnotationConfig) -> (SequenceClip, Vec<Vec<TraceEntry>>) {
    let objects = filter_semantic(&scene.objects, &scene.background_categories);
    let mut states: Vec<AdaptationState> = objects.iter().map(|o| AdaptationState::new(o.instance_id, o.world_box)).collect();
    let mut out = clip.clone();
    let mut trace = Vec::with_capacity(clip.len());
    for frame in &mut out.frames {
        frame.objects.clear();
        let to_cam = frame.pose.inverse();
        let mut entries = Vec::with_capacity(states.len());
        for (obj, state) in objects.iter().zip(&mut states) {
            let carried = state.observe(obj, frame, cfg);
            let mut emitted = false;
            if let Some(world) = carried {
                let bbox = world.transformed(&to_cam);
                if passes_filters(obj.instance_id, &obj.category, &bbox, frame, &scene.background_categories, cfg) {
                    let prompt = prompt_rect(obj.instance_id, &frame.instance).expect("present object has pixels");
                    frame.objects.push(ObjectAnnotation {
                        instance_id: obj.instance_id,
                        category: obj.category.clone(),
                        bbox,
                        box_world: world,
                        prompt,
                        score: GT_SCORE,
                    });
                    emitted = true;
                }
            }
            entries.push(TraceEntry { instance_id: obj.instance_id, phase: state.phase, adapted: state.adapted, emitted });
        }
        trace.push(entries);
    }
    (out, trace)
}

/// Expresses poses relative to the first frame and world boxes in the first
/// camera's frame. Camera-frame boxes are unchanged.
pub fn rereference(clip: &SequenceClip) -> Result<SequenceClip> {
    let first = clip.frames.first().ok_or_else(|| Error::InvalidInput("cannot re-reference an empty clip".into()))?;
    let inv0 = first.pose.inverse();
    let mut out = clip.clone();
    for frame in &mut out.frames {
        frame.pose = inv0.compose(&frame.pose);
        for o in &mut frame.objects {
            o.box_world = o.box_world.transformed(&inv0);
        }
    }
    out.frames[0].pose = crate::geometry::RigidTransform::identity();
    Ok(out)
}

/// Annotates one clip end to end.
pub fn annotate_clip(clip: &SequenceClip, scene: &SceneSpec, cfg: &AnnotationConfig) -> Result<SequenceClip> {
    rereference(&adapt_boxes(clip, scene, cfg).0)
}

/// Annotates independent clips in parallel, preserving order.
pub fn annotate_clips(clips: &[SequenceClip], scene: &SceneSpec, cfg: &AnnotationConfig) -> Result<Vec<SequenceClip>> {
    cfg.validate()?;
    clips.par_iter().map(|c| annotate_clip(c, scene, cfg)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Mat3, RigidTransform};
    use std::sync::Arc;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::default()
    }

    fn obj(id: u32, category: &str, center: Vec3, dims: Vec3) -> SceneObject {
        SceneObject { instance_id: id, category: category.into(), world_box: OrientedBox3D::axis_aligned(center, dims) }
    }

    /// Frame with the camera at the origin looking down +z (world = camera).
    fn frame_of(objects: &[SceneObject]) -> FrameRecord {
        let refs: Vec<&SceneObject> = objects.iter().collect();
        let pose = RigidTransform::identity();
        let (depth, instance) = render_objects(&refs, &pose, &k());
        FrameRecord {
            source_index: 0,
            intrinsics: k(),
            pose,
            depth: Arc::new(depth),
            instance: Arc::new(instance),
            depth_file: String::new(),
            instance_file: String::new(),
            objects: Vec::new(),
        }
    }

    #[test]
    fn semantic_filter() {
        let bg = vec!["floor".to_string(), "wall".to_string(), "void".to_string()];
        let wall = obj(1, "wall", Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0));
        let chair = obj(2, "chair", Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0));
        let kept = filter_semantic(&[wall, chair], &bg);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].category, "chair");
        assert!(filter_semantic(&[], &bg).is_empty());
    }

    #[test]
    fn frustum_depth_filter() {
        let unit = Vec3::new(1.0, 1.0, 1.0);
        let behind = obj(1, "a", Vec3::new(0.0, 0.0, -3.0), unit);
        let far = obj(2, "a", Vec3::new(0.0, 0.0, 11.0), unit);
        let ahead = obj(3, "a", Vec3::new(0.0, 0.0, 2.0), unit);
        let straddling = obj(4, "a", Vec3::new(0.0, 0.0, 0.0), unit);
        let kept = filter_frustum_depth(&[behind, far, ahead, straddling], &RigidTransform::identity(), 10.0);
        let ids: Vec<u32> = kept.iter().map(|o| o.instance_id).collect();
        assert_eq!(ids, vec![3, 4]);
    }

    #[test]
    fn pixel_count_boundary() {
        // hand-built mask: exactly 99 then 100 labelled pixels inside the
        // projection of a box 2 m ahead
        let b = OrientedBox3D::axis_aligned(Vec3::new(0.0, 0.0, 2.0), Vec3::new(1.0, 1.0, 0.2));
        let mut mask = Mask2D::filled(128, 128, 0);
        for n in 0..99u32 {
            mask.set(50 + n % 20, 50 + n / 20, 7);
        }
        assert_eq!(visible_pixel_count(7, &b, &mask, &k()), 99);
        assert!(!filter_occlusion_pixels(7, &b, &mask, &k(), 100));
        mask.set(60, 60, 7);
        assert!(filter_occlusion_pixels(7, &b, &mask, &k(), 100));
        assert!(!filter_occlusion_pixels(8, &b, &mask, &k(), 1));
        // labelled pixels outside the projected rect are not counted
        let mut outside = Mask2D::filled(128, 128, 0);
        outside.set(0, 0, 7);
        assert_eq!(visible_pixel_count(7, &b, &outside, &k()), 0);
    }

    #[test]
    fn unoccluded_object_passes_vertex_filter_and_is_fully_visible() {
        let cube = obj(1, "box", Vec3::new(0.2, 0.1, 4.0), Vec3::new(0.8, 0.6, 0.7));
        let frame = frame_of(std::slice::from_ref(&cube));
        let cfg = AnnotationConfig::default();
        assert!(filter_vertex_depth(&cube.world_box, &frame.depth, &k(), &cfg));
        assert!(is_fully_visible(&cube, &frame, &cfg));
        assert!(passes_filters(1, "box", &cube.world_box, &frame, &[], &cfg));
    }

    #[test]
    fn occluded_and_truncated_objects_are_not_fully_visible() {
        let cfg = AnnotationConfig::default();
        let cube = obj(1, "box", Vec3::new(0.0, 0.0, 4.0), Vec3::new(0.8, 0.8, 0.8));
        let blocker = obj(2, "box", Vec3::new(0.3, 0.0, 2.0), Vec3::new(0.3, 0.3, 0.1));
        let frame = frame_of(&[cube.clone(), blocker]);
        assert!(!is_fully_visible(&cube, &frame, &cfg));
        let edge = obj(3, "box", Vec3::new(2.2, 0.0, 4.0), Vec3::new(0.8, 0.8, 0.8));
        let frame = frame_of(std::slice::from_ref(&edge));
        assert!(!is_fully_visible(&edge, &frame, &cfg));
    }

    #[test]
    fn prompt_covers_pixel_edges() {
        let mut mask = Mask2D::filled(8, 8, 0);
        mask.set(2, 3, 5);
        mask.set(4, 6, 5);
        assert_eq!(prompt_rect(5, &mask), Some(Rect::new(1.5, 2.5, 4.5, 6.5)));
        assert_eq!(prompt_rect(9, &mask), None);
    }

    #[test]
    fn rereference_matches_matrix_products() {
        let poses: Vec<RigidTransform> = (0..5)
            .map(|i| {
                let a = i as f64 * 0.3;
                RigidTransform::new(Mat3::rot_z(a) * Mat3::rot_x(0.1 * a), Vec3::new(a, 1.0 - a, 0.5 * a))
            })
            .collect();
        let clip = SequenceClip {
            sequence_id: "s".into(),
            scene_id: "s".into(),
            frames: poses
                .iter()
                .map(|p| FrameRecord { pose: *p, ..frame_of(&[]) })
                .collect(),
        };
        let out = rereference(&clip).unwrap();
        assert_eq!(out.frames[0].pose, RigidTransform::identity());
        for (f, p) in out.frames.iter().zip(&poses) {
            let back = poses[0].compose(&f.pose);
            assert!(back.rotation.max_abs_diff(&p.rotation) < 1e-9);
            assert!(back.translation.max_abs_diff(p.translation) < 1e-9);
            // oracle: R0ᵀ·Ri and R0ᵀ·(ti − t0) as explicit products
            let r0t = poses[0].rotation.transpose();
            assert!(f.pose.rotation.max_abs_diff(&(r0t * p.rotation)) < 1e-12);
            assert!(f.pose.translation.max_abs_diff(r0t.mul_vec(p.translation - poses[0].translation)) < 1e-12);
        }
        assert!(rereference(&SequenceClip { frames: vec![], ..clip }).is_err());
    }
}
