//! Per-frame records and fixed-length sequence clips.

use crate::geometry::{CameraIntrinsics, DepthMap, Mask2D, OrientedBox3D, Rect, RigidTransform};
use std::sync::Arc;

/// Ground-truth score carried by every annotation.
pub const GT_SCORE: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectAnnotation {
    pub instance_id: u32,
    pub category: String,
    /// Box in the camera frame of its own frame.
    pub bbox: OrientedBox3D,
    /// Box in the clip reference frame (camera frame of frame 0).
    pub box_world: OrientedBox3D,
    /// 2D prompt rectangle in pixels.
    pub prompt: Rect,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameRecord {
    /// Index of the frame in the recorded sequence it was cut from.
    pub source_index: usize,
    pub intrinsics: CameraIntrinsics,
    /// Camera-to-reference pose. Identity for frame 0 once re-referenced.
    pub pose: RigidTransform,
    pub depth: Arc<DepthMap>,
    pub instance: Arc<Mask2D>,
    /// Raster locations relative to the dataset root.
    pub depth_file: String,
    pub instance_file: String,
    pub objects: Vec<ObjectAnnotation>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceClip {
    pub sequence_id: String,
    pub scene_id: String,
    pub frames: Vec<FrameRecord>,
}

impl SequenceClip {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Number of annotations per frame.
    pub fn object_counts(&self) -> Vec<usize> {
        self.frames.iter().map(|f| f.objects.len()).collect()
    }
}
