//! Browser bindings for three interactive views:
//!
//! * an IoU explorer for two gravity-aligned boxes,
//! * a viewer for rendered synthetic walks with their annotations,
//! * the dimension loss swept over the predicted width.
//!
//! Every binding is a thin wrapper over a plain Rust function so the
//! numerics are testable without a JavaScript host.

use seqbox::annotate::{annotate_clips, AnnotationConfig};
use seqbox::clip::SequenceClip;
use seqbox::geometry::{iou3d, project, Vec3};
use seqbox::losses::{l_dim, BoxParams};
use seqbox::scene::{generate_scene, record_sequence, segment_clips, CameraConfig, SceneConfig};
use seqbox::{Error, Result};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Gravity-aligned box from `[x, y, z, w, h, l, yaw]`.
pub fn box_params(p: &[f64]) -> Result<BoxParams> {
    if p.len() != 7 {
        return Err(Error::DimMismatch(format!("expected 7 box parameters, got {}", p.len())));
    }
    if p.iter().any(|v| !v.is_finite()) || p[3..6].iter().any(|d| *d <= 0.0) {
        return Err(Error::InvalidInput("box parameters must be finite with positive dims".into()));
    }
    Ok(BoxParams::from_slice(p))
}

pub fn box_iou(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(iou3d(&box_params(a)?.to_box(), &box_params(b)?.to_box()))
}

/// Bird's-eye footprint: the four `(x, z)` corners of the box, in order
/// around its outline.
pub fn footprint(p: &[f64]) -> Result<Vec<f64>> {
    let b = box_params(p)?.to_box();
    let (hw, hl) = (b.dims.x / 2.0, b.dims.z / 2.0);
    Ok([(-hw, -hl), (hw, -hl), (hw, hl), (-hw, hl)]
        .iter()
        .flat_map(|&(x, z)| {
            let c = b.center + b.rotation.mul_vec(Vec3::new(x, 0.0, z));
            [c.x, c.z]
        })
        .collect())
}

/// `(w, L_dim, dL_dim/dw)` triples for `n` predicted widths in
/// `[w_from, w_to]`, with the predicted height and length held fixed.
pub fn dim_curve(gt_dims: [f64; 3], pred_h: f64, pred_l: f64, w_from: f64, w_to: f64, n: usize) -> Result<Vec<f64>> {
    if n < 2 || !(w_from > 0.0 && w_to > w_from) {
        return Err(Error::InvalidInput("need n >= 2 and 0 < w_from < w_to".into()));
    }
    let gt = box_params(&[0.0, 0.0, 4.0, gt_dims[0], gt_dims[1], gt_dims[2], 0.0])?;
    let mut out = Vec::with_capacity(3 * n);
    for i in 0..n {
        let w = w_from + (w_to - w_from) * i as f64 / (n - 1) as f64;
        let pred = box_params(&[0.0, 0.0, 4.0, w, pred_h, pred_l, 0.0])?;
        let lv = l_dim(&pred, &gt);
        out.extend([w, lv.value, lv.gradient[3]]);
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
pub struct ViewObject {
    pub instance_id: u32,
    pub category: String,
    pub depth: f64,
    /// Projected corners `[u, v]`; `None` for corners behind the camera.
    pub corners: Vec<Option<[f64; 2]>>,
    pub prompt: [f64; 4],
}

/// One annotated synthetic walk, rendered and kept in memory.
pub struct Walk {
    pub clip: SequenceClip,
}

impl Walk {
    pub fn new(seed: u64, n_objects: usize, frames: usize) -> Result<Self> {
        let scene_cfg = SceneConfig { n_objects, ..Default::default() };
        let scene = generate_scene(&scene_cfg, seed)?;
        let raw = record_sequence("walk", "scene", &scene, &CameraConfig::default(), frames, seed ^ 0x5eed)?;
        let clips = segment_clips(&raw, frames, frames)?;
        let clip = annotate_clips(&clips, &scene, &AnnotationConfig::default())?.remove(0);
        Ok(Self { clip })
    }

    fn frame(&self, i: usize) -> Result<&seqbox::clip::FrameRecord> {
        self.clip.frames.get(i).ok_or_else(|| Error::InvalidInput(format!("no frame {i}")))
    }

    /// RGBA pixels: depth shading tinted by instance id.
    pub fn rgba(&self, i: usize) -> Result<Vec<u8>> {
        let f = self.frame(i)?;
        let mut out = Vec::with_capacity(f.depth.data.len() * 4);
        for (d, id) in f.depth.data.iter().zip(&f.instance.data) {
            if !d.is_finite() {
                out.extend([0, 0, 0, 255]);
                continue;
            }
            let shade = (1.0 - (*d as f64 / 8.0).min(1.0)) * 0.8 + 0.2;
            let tint = instance_color(*id);
            out.extend(tint.map(|c| (c as f64 * shade) as u8));
            out.push(255);
        }
        Ok(out)
    }

    pub fn objects(&self, i: usize) -> Result<Vec<ViewObject>> {
        let f = self.frame(i)?;
        Ok(f.objects
            .iter()
            .map(|o| ViewObject {
                instance_id: o.instance_id,
                category: o.category.clone(),
                depth: o.bbox.center.z,
                corners: o.bbox.corners().iter().map(|&c| project(c, &f.intrinsics).ok().map(|(u, v, _)| [u, v])).collect(),
                prompt: [o.prompt.x0, o.prompt.y0, o.prompt.x1, o.prompt.y1],
            })
            .collect())
    }
}

/// Background and structure stay gray; foreground ids get distinct hues.
fn instance_color(id: u32) -> [u8; 3] {
    if id == 0 {
        return [160, 160, 160];
    }
    let h = (id.wrapping_mul(2_654_435_761) >> 8) as f64 / (1u32 << 24) as f64 * 6.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    let (r, g, b) = match h as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [r, g, b].map(|c: f64| (80.0 + 175.0 * c) as u8)
}

// ---------------------------------------------------------------- bindings

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = boxIou)]
pub fn box_iou_js(a: &[f64], b: &[f64]) -> std::result::Result<f64, JsError> {
    box_iou(a, b).map_err(js)
}

#[wasm_bindgen(js_name = footprint)]
pub fn footprint_js(p: &[f64]) -> std::result::Result<Vec<f64>, JsError> {
    footprint(p).map_err(js)
}

#[wasm_bindgen(js_name = dimCurve)]
pub fn dim_curve_js(gt: &[f64], pred_h: f64, pred_l: f64, w_from: f64, w_to: f64, n: usize) -> std::result::Result<Vec<f64>, JsError> {
    let gt: [f64; 3] = gt.try_into().map_err(|_| JsError::new("expected 3 ground-truth dims"))?;
    dim_curve(gt, pred_h, pred_l, w_from, w_to, n).map_err(js)
}

#[wasm_bindgen]
pub struct WalkView {
    inner: Walk,
}

#[wasm_bindgen]
impl WalkView {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, n_objects: usize, frames: usize) -> std::result::Result<WalkView, JsError> {
        Walk::new(seed, n_objects, frames).map(|inner| WalkView { inner }).map_err(js)
    }

    #[wasm_bindgen(getter)]
    pub fn frames(&self) -> usize {
        self.inner.clip.len()
    }

    #[wasm_bindgen(getter)]
    pub fn width(&self) -> u32 {
        self.inner.clip.frames[0].intrinsics.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> u32 {
        self.inner.clip.frames[0].intrinsics.height
    }

    pub fn rgba(&self, i: usize) -> std::result::Result<Vec<u8>, JsError> {
        self.inner.rgba(i).map_err(js)
    }

    /// Annotations of frame `i` as JSON.
    pub fn objects(&self, i: usize) -> std::result::Result<String, JsError> {
        let objs = self.inner.objects(i).map_err(js)?;
        serde_json::to_string(&objs).map_err(|e| JsError::new(&e.to_string()))
    }
}
