//! Training losses with exact forward-mode gradients and a central-difference
//! checker.
//!
//! Every loss is a small struct holding the target and implementing
//! [`ScalarFn`] over a flat prediction vector, so the value, the gradient
//! and the finite-difference check all run the same code.

use crate::autodiff::{gradient, KinkRecorder, Real, ScalarFn};
use crate::error::{Error, Result};
use crate::geometry::{chamfer_with, iou2d, iou3d_generic, CameraIntrinsics, ChamferMode, DepthMap, Mat3, OrientedBox3D, Rect, RigidTransform, Vec3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::collections::BTreeMap;
use std::f64::consts::PI;

/// Temperature of the soft (w, l) assignment.
pub const DIM_TAU: f64 = 0.1;
/// Parameters per box: center (3), dims w/h/l (3), yaw.
pub const BOX_PARAMS: usize = 7;
/// Parameters per pose: translation (3), quaternion (4), vertical fov.
pub const POSE_PARAMS: usize = 8;
/// Pose parameters used by the consistency losses (no fov).
pub const RIGID_PARAMS: usize = 7;

/// Gravity-aligned camera-frame box: rotation is `Ry(yaw)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxParams<R = f64> {
    pub center: Vec3<R>,
    /// (w, h, l); h is the vertical extent.
    pub dims: Vec3<R>,
    pub yaw: R,
}

impl<R: Real> BoxParams<R> {
    pub fn from_slice(p: &[R]) -> Self {
        Self { center: Vec3::new(p[0], p[1], p[2]), dims: Vec3::new(p[3], p[4], p[5]), yaw: p[6] }
    }

    pub fn to_box(&self) -> OrientedBox3D<R> {
        OrientedBox3D::from_yaw(self.center, self.dims, self.yaw)
    }
}

impl BoxParams<f64> {
    pub fn to_vec(&self) -> Vec<f64> {
        vec![self.center.x, self.center.y, self.center.z, self.dims.x, self.dims.y, self.dims.z, self.yaw]
    }

    /// Parameters of a box whose rotation is a pure yaw within 1e-6.
    pub fn from_box(b: &OrientedBox3D) -> Option<Self> {
        b.yaw().map(|yaw| Self { center: b.center, dims: b.dims, yaw })
    }
}

/// Camera pose: translation, rotation quaternion `(w, x, y, z)`, vertical fov.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseParams<R = f64> {
    pub translation: Vec3<R>,
    pub quaternion: [R; 4],
    pub fov: R,
}

impl<R: Real> PoseParams<R> {
    pub fn from_slice(p: &[R]) -> Self {
        Self { translation: Vec3::new(p[0], p[1], p[2]), quaternion: [p[3], p[4], p[5], p[6]], fov: p[7] }
    }

    pub fn to_transform(&self) -> RigidTransform<R> {
        RigidTransform::new(Mat3::from_quaternion(self.quaternion), self.translation)
    }
}

impl PoseParams<f64> {
    pub fn to_vec(&self) -> Vec<f64> {
        let (t, q) = (self.translation, self.quaternion);
        vec![t.x, t.y, t.z, q[0], q[1], q[2], q[3], self.fov]
    }

    pub fn from_transform(t: &RigidTransform, fov: f64) -> Self {
        Self { translation: t.translation, quaternion: t.rotation.to_quaternion(), fov }
    }
}

fn rigid_from_slice<R: Real>(p: &[R]) -> RigidTransform<R> {
    RigidTransform::new(Mat3::from_quaternion([p[3], p[4], p[5], p[6]]), Vec3::new(p[0], p[1], p[2]))
}

/// A loss value and its partial derivatives w.r.t. the prediction vector.
#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub gradient: Vec<f64>,
}

/// Evaluates `f` with its gradient at `x`.
pub fn evaluate<F: ScalarFn + ?Sized>(f: &F, x: &[f64]) -> LossValue {
    let (value, gradient) = gradient(f, x);
    LossValue { value, gradient }
}

fn l1<R: Real>(a: Vec3<R>, b: Vec3<R>) -> R {
    (a.x - b.x).abs() + (a.y - b.y).abs() + (a.z - b.z).abs()
}

// ------------------------------------------------------------ detection

/// L1 distance between box centers.
#[derive(Clone, Debug)]
pub struct CenterLoss {
    pub gt: BoxParams,
}

impl ScalarFn for CenterLoss {
    fn eval<R: Real>(&self, p: &[R]) -> R {
        l1(BoxParams::from_slice(p).center, Vec3::from_f64(self.gt.center))
    }
}

/// L1 distance between box depths (camera z).
#[derive(Clone, Debug)]
pub struct DepthLoss {
    pub gt: BoxParams,
}

impl ScalarFn for DepthLoss {
    fn eval<R: Real>(&self, p: &[R]) -> R {
        (p[2] - R::cst(self.gt.center.z)).abs()
    }
}

/// Image rectangle spanned by the projected corners; depths are clamped to
/// 1 mm so boxes reaching behind the camera stay finite.
pub fn projected_rect<R: Real>(b: &OrientedBox3D<R>, k: &CameraIntrinsics) -> Rect<R> {
    let pts: Vec<(R, R)> = b
        .corners()
        .iter()
        .map(|c| {
            let z = c.z.max(R::cst(1e-3));
            (R::cst(k.fx) * c.x / z + R::cst(k.cx), R::cst(k.fy) * c.y / z + R::cst(k.cy))
        })
        .collect();
    Rect::bounding(&pts)
}

/// `1 − IoU` of the projected rectangles.
#[derive(Clone, Debug)]
pub struct Iou2dLoss {
    pub gt: BoxParams,
    pub intrinsics: CameraIntrinsics,
}

impl ScalarFn for Iou2dLoss {
    fn eval<R: Real>(&self, p: &[R]) -> R {
        let pred = projected_rect(&BoxParams::from_slice(p).to_box(), &self.intrinsics);
        let gt = projected_rect(&OrientedBox3D::from_f64(&self.gt.to_box()), &self.intrinsics);
        R::one() - iou2d(&pred, &gt)
    }
}

/// `1 − IoU` of the oriented boxes.
#[derive(Clone, Debug)]
pub struct Iou3dLoss {
    pub gt: BoxParams,
}

impl ScalarFn for Iou3dLoss {
    fn eval<R: Real>(&self, p: &[R]) -> R {
        let gt = OrientedBox3D::from_f64(&self.gt.to_box());
        R::one() - iou3d_generic(&BoxParams::from_slice(p).to_box(), &gt)
    }
}

/// Chamfer distance between the two corner sets.
#[derive(Clone, Debug)]
pub struct CornerLoss {
    pub gt: BoxParams,
    pub mode: ChamferMode,
}

impl ScalarFn for CornerLoss {
    fn eval<R: Real>(&self, p: &[R]) -> R {
        let gt = self.gt.to_box().corners().map(Vec3::from_f64);
        chamfer_with(&BoxParams::from_slice(p).to_box().corners(), &gt, self.mode).expect("corner sets are non-empty")
    }
}

/// Height L1 plus a soft minimum over the two (w, l) assignments, so a box
/// predicted with width and length swapped is not penalized.
#[derive(Clone, Debug)]
pub struct DimLoss {
    pub gt: BoxParams,
    pub tau: f64,
}

impl DimLoss {
    pub fn new(gt: BoxParams) -> Self {
        Self { gt, tau: DIM_TAU }
    }
}

impl ScalarFn for DimLoss {
    fn eval<R: Real>(&self, p: &[R]) -> R {
        let (w, h, l) = (p[3], p[4], p[5]);
        let g = self.gt.dims;
        let (gw, gh, gl) = (R::cst(g.x), R::cst(g.y), R::cst(g.z));
        let l_h = (h - gh).abs();
        let straight = (w - gw).abs() + (l - gl).abs();
        let swapped = (w - gl).abs() + (l - gw).abs();
        let tau = R::cst(self.tau);
        let (a1, a2) = (-straight / tau, -swapped / tau);
        let m = a1.max(a2);
        let (e1, e2) = ((a1 - m).exp(), (a2 - m).exp());
        let z = e1 + e2;
        l_h + (e1 * straight + e2 * swapped) / z
    }
}

pub fn l_center(pred: &BoxParams, gt: &BoxParams) -> LossValue {
    evaluate(&CenterLoss { gt: *gt }, &pred.to_vec())
}

pub fn l_d(pred: &BoxParams, gt: &BoxParams) -> LossValue {
    evaluate(&DepthLoss { gt: *gt }, &pred.to_vec())
}

pub fn l_iou2d(pred: &BoxParams, gt: &BoxParams, k: &CameraIntrinsics) -> LossValue {
    evaluate(&Iou2dLoss { gt: *gt, intrinsics: *k }, &pred.to_vec())
}

pub fn l_iou3d(pred: &BoxParams, gt: &BoxParams) -> LossValue {
    evaluate(&Iou3dLoss { gt: *gt }, &pred.to_vec())
}

pub fn l_corner(pred: &BoxParams, gt: &BoxParams) -> LossValue {
    evaluate(&CornerLoss { gt: *gt, mode: ChamferMode::Euclidean }, &pred.to_vec())
}

pub fn l_dim(pred: &BoxParams, gt: &BoxParams) -> LossValue {
    evaluate(&DimLoss::new(*gt), &pred.to_vec())
}

// ----------------------------------------------------------- depth, pose

/// Scale-invariant log loss over every pixel of a predicted depth map.
/// Pixels where the target has no finite positive depth are ignored.
#[derive(Clone, Debug)]
pub struct SilogLoss {
    pub gt: DepthMap,
    pub lambda: f64,
}

impl SilogLoss {
    fn valid(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.gt.data.iter().enumerate().filter(|(_, d)| d.is_finite() && **d > 0.0).map(|(i, d)| (i, *d as f64))
    }
}

impl ScalarFn for SilogLoss {
    fn eval<R: Real>(&self, p: &[R]) -> R {
        let g: Vec<R> = self.valid().map(|(i, d)| p[i].ln() - R::cst(d.ln())).collect();
        let n = R::cst(g.len() as f64);
        let mut mean = R::zero();
        for &x in &g {
            mean += x;
        }
        mean /= n;
        // mean(g²) − λ·mean(g)² written as a centred variance plus the
        // scale term, so constant residuals cancel exactly
        let mut var = R::zero();
        for &x in &g {
            var += (x - mean) * (x - mean);
        }
        var = var / n + R::cst(1.0 - self.lambda) * mean * mean;
        var.max(R::zero()).sqrt()
    }
}

pub fn silog(pred: &DepthMap, gt: &DepthMap, lambda: f64) -> Result<LossValue> {
    if (pred.width, pred.height) != (gt.width, gt.height) {
        return Err(Error::DimMismatch(format!("{}x{} vs {}x{}", pred.width, pred.height, gt.width, gt.height)));
    }
    let loss = SilogLoss { gt: gt.clone(), lambda };
    let mut any = false;
    for (i, _) in loss.valid() {
        any = true;
        let d = pred.data[i];
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::NonPositiveDepth(d as f64));
        }
    }
    if !any {
        return Err(Error::EmptySet);
    }
    let x: Vec<f64> = pred.data.iter().map(|&d| d as f64).collect();
    Ok(evaluate(&loss, &x))
}

/// Quaternion normalized and flipped to `w ≥ 0`.
fn canonical_quaternion<R: Real>(q: [R; 4]) -> [R; 4] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    q[0].kink();
    let s = if q[0].value() < 0.0 { -R::one() / n } else { R::one() / n };
    q.map(|c| c * s)
}

/// L1 over translation, canonical quaternion and fov.
#[derive(Clone, Debug)]
pub struct PoseLoss {
    pub gt: PoseParams,
}

impl ScalarFn for PoseLoss {
    fn eval<R: Real>(&self, p: &[R]) -> R {
        let pred = PoseParams::from_slice(p);
        let qp = canonical_quaternion(pred.quaternion);
        let qg = canonical_quaternion(self.gt.quaternion.map(R::cst));
        let mut rot = R::zero();
        for k in 0..4 {
            rot += (qp[k] - qg[k]).abs();
        }
        l1(pred.translation, Vec3::from_f64(self.gt.translation)) + rot + (pred.fov - R::cst(self.gt.fov)).abs()
    }
}

pub fn l_pose(pred: &PoseParams, gt: &PoseParams) -> LossValue {
    evaluate(&PoseLoss { gt: *gt }, &pred.to_vec())
}

// ----------------------------------------------------------- consistency

/// Per-frame predictions: camera-to-world pose and camera-frame boxes.
#[derive(Clone, Debug, PartialEq)]
pub struct FramePrediction {
    pub pose: RigidTransform,
    pub boxes: Vec<(u32, BoxParams)>,
}

/// Flat layout of a clip prediction: per frame, translation and quaternion
/// (7 values) followed by 7 values per box.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipLayout {
    /// Instance ids per frame, in parameter order.
    pub ids: Vec<Vec<u32>>,
}

impl ClipLayout {
    pub fn of(frames: &[FramePrediction]) -> Self {
        Self { ids: frames.iter().map(|f| f.boxes.iter().map(|b| b.0).collect()).collect() }
    }

    pub fn len(&self) -> usize {
        self.ids.iter().map(|f| RIGID_PARAMS + BOX_PARAMS * f.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn flatten(frames: &[FramePrediction]) -> Vec<f64> {
        let mut out = Vec::new();
        for f in frames {
            let (t, q) = (f.pose.translation, f.pose.rotation.to_quaternion());
            out.extend([t.x, t.y, t.z, q[0], q[1], q[2], q[3]]);
            for (_, b) in &f.boxes {
                out.extend(b.to_vec());
            }
        }
        out
    }

    /// World-frame boxes `(frame, id, box)` from a flat vector.
    fn world_boxes<R: Real>(&self, p: &[R]) -> Vec<(usize, u32, OrientedBox3D<R>)> {
        let mut out = Vec::new();
        let mut at = 0;
        for (t, ids) in self.ids.iter().enumerate() {
            let pose = rigid_from_slice(&p[at..at + RIGID_PARAMS]);
            at += RIGID_PARAMS;
            for &id in ids {
                let b = BoxParams::from_slice(&p[at..at + BOX_PARAMS]).to_box();
                out.push((t, id, b.transformed(&pose)));
                at += BOX_PARAMS;
            }
        }
        out
    }
}

/// Chamfer between predicted boxes mapped to the world frame and the
/// world-frame targets of the same frame and instance, summed over both.
#[derive(Clone, Debug)]
pub struct SpatialLoss {
    pub layout: ClipLayout,
    /// Target world boxes per frame, in layout order.
    pub gt: Vec<Vec<OrientedBox3D>>,
    pub mode: ChamferMode,
}

impl ScalarFn for SpatialLoss {
    fn eval<R: Real>(&self, p: &[R]) -> R {
        let mut total = R::zero();
        let mut k = vec![0usize; self.gt.len()];
        for (t, _, b) in self.layout.world_boxes(p) {
            let gt = self.gt[t][k[t]].corners().map(Vec3::from_f64);
            k[t] += 1;
            total += chamfer_with(&b.corners(), &gt, self.mode).expect("corner sets are non-empty");
        }
        total
    }
}

/// Chamfer of each frame's world-frame corners to the instance's temporal
/// mean corners, averaged over the frames showing it and summed over
/// instances.
#[derive(Clone, Debug)]
pub struct TemporalLoss {
    pub layout: ClipLayout,
    pub mode: ChamferMode,
}

impl ScalarFn for TemporalLoss {
    fn eval<R: Real>(&self, p: &[R]) -> R {
        let mut by_id: BTreeMap<u32, Vec<[Vec3<R>; 8]>> = BTreeMap::new();
        for (_, id, b) in self.layout.world_boxes(p) {
            by_id.entry(id).or_default().push(b.corners());
        }
        let mut total = R::zero();
        for sets in by_id.values() {
            let n = R::cst(sets.len() as f64);
            let mean: [Vec3<R>; 8] = std::array::from_fn(|c| {
                let mut acc = Vec3::zeros();
                for s in sets {
                    acc = acc + s[c];
                }
                acc.scale(R::one() / n)
            });
            let mut sum = R::zero();
            for s in sets {
                sum += chamfer_with(s, &mean, self.mode).expect("corner sets are non-empty");
            }
            total += sum / n;
        }
        total
    }
}

/// Target world boxes for `pred`'s layout, keyed by id per frame.
fn gt_in_layout(pred: &[FramePrediction], gt: &[Vec<(u32, OrientedBox3D)>]) -> Result<Vec<Vec<OrientedBox3D>>> {
    if pred.len() != gt.len() {
        return Err(Error::InstanceMismatch(format!("{} predicted frames vs {} target frames", pred.len(), gt.len())));
    }
    pred.iter()
        .zip(gt)
        .enumerate()
        .map(|(t, (p, g))| {
            let mut pi: Vec<u32> = p.boxes.iter().map(|b| b.0).collect();
            let mut gi: Vec<u32> = g.iter().map(|b| b.0).collect();
            pi.sort_unstable();
            gi.sort_unstable();
            if pi != gi || pi.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InstanceMismatch(format!("frame {t}: predicted ids {pi:?} vs target ids {gi:?}")));
            }
            Ok(p.boxes.iter().map(|(id, _)| g.iter().find(|b| b.0 == *id).unwrap().1).collect())
        })
        .collect()
}

pub fn l_spatial(pred: &[FramePrediction], gt: &[Vec<(u32, OrientedBox3D)>]) -> Result<LossValue> {
    let loss = SpatialLoss { layout: ClipLayout::of(pred), gt: gt_in_layout(pred, gt)?, mode: ChamferMode::Euclidean };
    Ok(evaluate(&loss, &ClipLayout::flatten(pred)))
}

pub fn l_temp(pred: &[FramePrediction]) -> LossValue {
    let loss = TemporalLoss { layout: ClipLayout::of(pred), mode: ChamferMode::Euclidean };
    evaluate(&loss, &ClipLayout::flatten(pred))
}

// ------------------------------------------------------------ combining

/// Unweighted sum of loss values over the same parameter vector.
pub fn total_loss(parts: &[LossValue]) -> Result<LossValue> {
    let n = parts.first().map_or(0, |p| p.gradient.len());
    if let Some(bad) = parts.iter().find(|p| p.gradient.len() != n) {
        return Err(Error::DimMismatch(format!("gradient of length {} in a sum over {n} parameters", bad.gradient.len())));
    }
    let mut out = LossValue { value: 0.0, gradient: vec![0.0; n] };
    for p in parts {
        out.value += p.value;
        for (a, b) in out.gradient.iter_mut().zip(&p.gradient) {
            *a += b;
        }
    }
    Ok(out)
}

/// Any of the losses above, optionally restricted to a window of a larger
/// parameter vector, or a sum of such terms.
#[derive(Clone, Debug)]
pub enum AnyLoss {
    Center(CenterLoss),
    Depth(DepthLoss),
    Iou2d(Iou2dLoss),
    Iou3d(Iou3dLoss),
    Corner(CornerLoss),
    Dim(DimLoss),
    Silog(SilogLoss),
    Pose(PoseLoss),
    Spatial(SpatialLoss),
    Temporal(TemporalLoss),
    /// Inner loss applied to `params[offset..offset + len]`.
    Window { offset: usize, len: usize, inner: Box<AnyLoss> },
    Sum(Vec<AnyLoss>),
}

impl ScalarFn for AnyLoss {
    fn eval<R: Real>(&self, p: &[R]) -> R {
        match self {
            AnyLoss::Center(l) => l.eval(p),
            AnyLoss::Depth(l) => l.eval(p),
            AnyLoss::Iou2d(l) => l.eval(p),
            AnyLoss::Iou3d(l) => l.eval(p),
            AnyLoss::Corner(l) => l.eval(p),
            AnyLoss::Dim(l) => l.eval(p),
            AnyLoss::Silog(l) => l.eval(p),
            AnyLoss::Pose(l) => l.eval(p),
            AnyLoss::Spatial(l) => l.eval(p),
            AnyLoss::Temporal(l) => l.eval(p),
            AnyLoss::Window { offset, len, inner } => inner.eval(&p[*offset..offset + len]),
            AnyLoss::Sum(parts) => {
                let mut acc = R::zero();
                for l in parts {
                    acc += l.eval(p);
                }
                acc
            }
        }
    }
}

// -------------------------------------------------------- gradient check

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub value: f64,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// `|numeric − analytic| / max(|numeric|, |analytic|, 1e-4)` per parameter.
    pub rel_err: Vec<f64>,
    /// Parameters within `10·h` of a non-smooth point.
    pub flagged: Vec<bool>,
}

impl GradCheck {
    /// Largest relative error over parameters that are not flagged.
    pub fn max_rel_err(&self) -> f64 {
        self.rel_err.iter().zip(&self.flagged).filter(|(_, f)| !**f).map(|(e, _)| *e).fold(0.0, f64::max)
    }

    pub fn n_flagged(&self) -> usize {
        self.flagged.iter().filter(|f| **f).count()
    }
}

/// Compares the forward-mode gradient with central differences of step `h`.
pub fn grad_check<F: ScalarFn + ?Sized>(f: &F, x: &[f64], h: f64) -> GradCheck {
    grad_check_with(f, x, h, |_, g| g)
}

/// Like [`grad_check`], with a hook that may alter the analytic gradient
/// before comparison (used to exercise failure reporting).
pub fn grad_check_with<F: ScalarFn + ?Sized>(f: &F, x: &[f64], h: f64, tamper: impl FnOnce(&[f64], Vec<f64>) -> Vec<f64>) -> GradCheck {
    let recorder = KinkRecorder::start(x.len());
    let (value, analytic) = gradient(f, x);
    let kink_distance = recorder.finish();
    let analytic = tamper(x, analytic);
    let mut xs = x.to_vec();
    let numeric: Vec<f64> = (0..x.len())
        .map(|j| {
            xs[j] = x[j] + h;
            let up = f.eval::<f64>(&xs);
            xs[j] = x[j] - h;
            let down = f.eval::<f64>(&xs);
            xs[j] = x[j];
            (up - down) / (2.0 * h)
        })
        .collect();
    let rel_err = numeric.iter().zip(&analytic).map(|(n, a)| (n - a).abs() / n.abs().max(a.abs()).max(1e-4)).collect();
    let flagged = kink_distance.iter().map(|d| *d <= 10.0 * h).collect();
    GradCheck { value, analytic, numeric, rel_err, flagged }
}

// ------------------------------------------------------- sampled problems

/// Loss families covered by the gradient suite.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Center,
    Depth,
    Iou2d,
    Iou3d,
    Corner,
    Dim,
    Silog,
    Pose,
    Spatial,
    Temporal,
    Total,
}

impl LossKind {
    pub const ALL: [LossKind; 11] = [
        LossKind::Center,
        LossKind::Depth,
        LossKind::Iou2d,
        LossKind::Iou3d,
        LossKind::Corner,
        LossKind::Dim,
        LossKind::Silog,
        LossKind::Pose,
        LossKind::Spatial,
        LossKind::Temporal,
        LossKind::Total,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Center => "center",
            LossKind::Depth => "depth",
            LossKind::Iou2d => "iou2d",
            LossKind::Iou3d => "iou3d",
            LossKind::Corner => "corner",
            LossKind::Dim => "dim",
            LossKind::Silog => "silog",
            LossKind::Pose => "pose",
            LossKind::Spatial => "spatial",
            LossKind::Temporal => "temporal",
            LossKind::Total => "total",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

/// A loss with a random target, the parameters that reproduce the target
/// exactly, and a perturbed evaluation point.
#[derive(Clone, Debug)]
pub struct Problem {
    pub kind: LossKind,
    pub loss: AnyLoss,
    pub target: Vec<f64>,
    pub point: Vec<f64>,
}

fn random_box(rng: &mut impl Rng) -> BoxParams {
    BoxParams {
        center: Vec3::new(rng.random_range(-1.5..1.5), rng.random_range(-1.0..1.0), rng.random_range(3.0..8.0)),
        dims: Vec3::new(rng.random_range(0.3..2.5), rng.random_range(0.3..2.5), rng.random_range(0.3..2.5)),
        yaw: rng.random_range(-PI..PI),
    }
}

/// Nearby box with dims kept positive.
fn perturb_box(b: &BoxParams, scale: f64, rng: &mut impl Rng) -> BoxParams {
    let n = Normal::new(0.0, scale).unwrap();
    let mut v = b.to_vec();
    for (j, x) in v.iter_mut().enumerate() {
        *x += n.sample(rng);
        if (3..6).contains(&j) {
            *x = x.max(0.05);
        }
    }
    BoxParams::from_slice(&v)
}

fn random_yaw_pose(rng: &mut impl Rng) -> RigidTransform {
    // rotations about camera y keep camera-frame boxes gravity-aligned
    let t = Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-0.2..0.2), rng.random_range(-2.0..2.0));
    RigidTransform::new(Mat3::rot_y(rng.random_range(-PI..PI)), t)
}

fn random_quaternion(rng: &mut impl Rng) -> [f64; 4] {
    let n = Normal::new(0.0, 1.0).unwrap();
    let q: [f64; 4] = std::array::from_fn(|_| n.sample(rng));
    let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
    q.map(|c| c / norm)
}

/// Consistent clip: world boxes seen from several poses.
fn random_clip(rng: &mut impl Rng, frames: usize, objects: usize) -> (Vec<FramePrediction>, Vec<Vec<(u32, OrientedBox3D)>>) {
    let world: Vec<BoxParams> = (0..objects).map(|_| random_box(rng)).collect();
    let mut pred = Vec::new();
    let mut gt = Vec::new();
    for _ in 0..frames {
        let pose = random_yaw_pose(rng);
        let inv = pose.inverse();
        let boxes = world
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let cam = w.to_box().transformed(&inv);
                (i as u32 + 1, BoxParams::from_box(&cam).expect("yaw pose keeps boxes upright"))
            })
            .collect();
        pred.push(FramePrediction { pose, boxes });
        gt.push(world.iter().enumerate().map(|(i, w)| (i as u32 + 1, w.to_box())).collect());
    }
    (pred, gt)
}

fn perturb(x: &[f64], scale: f64, rng: &mut impl Rng) -> Vec<f64> {
    let n = Normal::new(0.0, scale).unwrap();
    x.iter().map(|v| v + n.sample(rng)).collect()
}

/// Draws a random problem of the given kind.
pub fn sample_problem(kind: LossKind, rng: &mut impl Rng) -> Problem {
    let gt = random_box(rng);
    let near = perturb_box(&gt, 0.15, rng);
    let k = CameraIntrinsics::default();
    let (loss, target, point) = match kind {
        LossKind::Center => (AnyLoss::Center(CenterLoss { gt }), gt.to_vec(), near.to_vec()),
        LossKind::Depth => (AnyLoss::Depth(DepthLoss { gt }), gt.to_vec(), near.to_vec()),
        LossKind::Iou2d => (AnyLoss::Iou2d(Iou2dLoss { gt, intrinsics: k }), gt.to_vec(), near.to_vec()),
        LossKind::Iou3d => (AnyLoss::Iou3d(Iou3dLoss { gt }), gt.to_vec(), near.to_vec()),
        LossKind::Corner => (AnyLoss::Corner(CornerLoss { gt, mode: ChamferMode::Euclidean }), gt.to_vec(), near.to_vec()),
        LossKind::Dim => {
            // half the time start from the swapped assignment
            let mut p = near;
            if rng.random_bool(0.5) {
                std::mem::swap(&mut p.dims.x, &mut p.dims.z);
            }
            (AnyLoss::Dim(DimLoss::new(gt)), gt.to_vec(), p.to_vec())
        }
        LossKind::Silog => {
            let (w, h) = (6u32, 5u32);
            let data: Vec<f32> = (0..w * h).map(|i| if i % 7 == 3 { f32::INFINITY } else { rng.random_range(0.5..8.0) }).collect();
            let gt_map = DepthMap::from_vec(w, h, data).unwrap();
            let target: Vec<f64> = gt_map.data.iter().map(|&d| if d.is_finite() { d as f64 } else { 1.0 }).collect();
            let point = target.iter().map(|d| d * rng.random_range(0.7..1.4)).collect();
            (AnyLoss::Silog(SilogLoss { gt: gt_map, lambda: rng.random_range(0.0..1.0) }), target, point)
        }
        LossKind::Pose => {
            let q = random_quaternion(rng);
            let gt_pose = PoseParams {
                translation: Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)),
                quaternion: if q[0] < 0.0 { q.map(|c| -c) } else { q },
                fov: rng.random_range(0.5..1.5),
            };
            let target = gt_pose.to_vec();
            let point = perturb(&target, 0.1, rng);
            (AnyLoss::Pose(PoseLoss { gt: gt_pose }), target, point)
        }
        LossKind::Spatial | LossKind::Temporal => {
            let (pred, gt_boxes) = random_clip(rng, 3, 2);
            let layout = ClipLayout::of(&pred);
            let target = ClipLayout::flatten(&pred);
            let point = perturb(&target, 0.05, rng);
            let loss = if kind == LossKind::Spatial {
                let gt = gt_boxes.into_iter().map(|f| f.into_iter().map(|b| b.1).collect()).collect();
                AnyLoss::Spatial(SpatialLoss { layout, gt, mode: ChamferMode::Euclidean })
            } else {
                AnyLoss::Temporal(TemporalLoss { layout, mode: ChamferMode::Euclidean })
            };
            (loss, target, point)
        }
        LossKind::Total => {
            // detection terms on every box, plus both consistency terms,
            // all over one clip vector
            let (pred, gt_boxes) = random_clip(rng, 2, 2);
            let layout = ClipLayout::of(&pred);
            let target = ClipLayout::flatten(&pred);
            let mut parts = Vec::new();
            let mut at = 0;
            for f in &pred {
                at += RIGID_PARAMS;
                for (_, b) in &f.boxes {
                    for inner in [
                        AnyLoss::Center(CenterLoss { gt: *b }),
                        AnyLoss::Depth(DepthLoss { gt: *b }),
                        AnyLoss::Iou2d(Iou2dLoss { gt: *b, intrinsics: k }),
                        AnyLoss::Iou3d(Iou3dLoss { gt: *b }),
                        AnyLoss::Corner(CornerLoss { gt: *b, mode: ChamferMode::Euclidean }),
                        AnyLoss::Dim(DimLoss::new(*b)),
                    ] {
                        parts.push(AnyLoss::Window { offset: at, len: BOX_PARAMS, inner: Box::new(inner) });
                    }
                    at += BOX_PARAMS;
                }
            }
            let gt = gt_boxes.into_iter().map(|f| f.into_iter().map(|b| b.1).collect()).collect();
            parts.push(AnyLoss::Spatial(SpatialLoss { layout: layout.clone(), gt, mode: ChamferMode::Euclidean }));
            parts.push(AnyLoss::Temporal(TemporalLoss { layout, mode: ChamferMode::Euclidean }));
            let point = perturb(&target, 0.05, rng);
            (AnyLoss::Sum(parts), target, point)
        }
    };
    Problem { kind, loss, target, point }
}

// ---------------------------------------------------------------- report

#[derive(Clone, Debug, PartialEq)]
pub struct LossCheckRow {
    pub kind: LossKind,
    pub seed: u64,
    /// Loss value at the target parameters.
    pub value_at_target: f64,
    pub max_rel_err: f64,
    pub flagged: usize,
    pub params: usize,
}

/// Runs the gradient check at `points` random problems per loss kind; each
/// problem is drawn from its own seed `seed + i`.
pub fn run_losscheck(kinds: &[LossKind], points: usize, seed: u64, h: f64, mut tamper: Option<&mut dyn FnMut(Vec<f64>) -> Vec<f64>>) -> Vec<LossCheckRow> {
    use rand::SeedableRng;
    let mut rows = Vec::new();
    for &kind in kinds {
        for i in 0..points as u64 {
            let s = seed.wrapping_add(i);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(s ^ ((kind as u64) << 32));
            let problem = sample_problem(kind, &mut rng);
            let value_at_target = problem.loss.eval::<f64>(&problem.target);
            let check = match tamper.as_deref_mut() {
                Some(t) => grad_check_with(&problem.loss, &problem.point, h, |_, g| t(g)),
                None => grad_check(&problem.loss, &problem.point, h),
            };
            rows.push(LossCheckRow {
                kind,
                seed: s,
                value_at_target,
                max_rel_err: check.max_rel_err(),
                flagged: check.n_flagged(),
                params: problem.point.len(),
            });
        }
    }
    rows
}

/// Fixed-width text table of check rows.
pub fn format_losscheck(rows: &[LossCheckRow]) -> String {
    let mut s = format!("{:<10} {:>6} {:>7} {:>12} {:>12} {:>8}\n", "loss", "seed", "params", "at_target", "max_rel_err", "flagged");
    for r in rows {
        s.push_str(&format!(
            "{:<10} {:>6} {:>7} {:>12.3e} {:>12.3e} {:>8}\n",
            r.kind.name(),
            r.seed,
            r.params,
            r.value_at_target,
            r.max_rel_err,
            r.flagged
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dim_loss_hand_examples() {
        let b = |w: f64, h: f64, l: f64| BoxParams { center: Vec3::new(0.0, 0.0, 5.0), dims: Vec3::new(w, h, l), yaw: 0.0 };
        assert_eq!(l_dim(&b(2.0, 1.0, 2.0), &b(2.0, 1.0, 2.0)).value, 0.0);
        // with w ≠ l the swapped assignment keeps weight e^(−2|w−l|/τ), so
        // the loss at pred = gt is small but not zero
        let at_gt = l_dim(&b(2.0, 1.0, 3.0), &b(2.0, 1.0, 3.0)).value;
        assert!((at_gt - 2.0 * (-20f64).exp() / (1.0 + (-20f64).exp())).abs() < 1e-20);
        let swapped = l_dim(&b(2.0, 1.0, 4.0), &b(4.0, 1.0, 2.0)).value;
        assert!(swapped <= 1e-16 && (swapped - 4.0 * (-40f64).exp() / (1.0 + (-40f64).exp())).abs() < 1e-30);
        let v = l_dim(&b(2.0, 5.0, 3.0), &b(2.0, 4.0, 3.0)).value;
        assert!((v - (1.0 + 2.0 * (-20f64).exp() / (1.0 + (-20f64).exp()))).abs() < 1e-12);
    }

    #[test]
    fn dim_loss_survives_huge_residuals() {
        let gt = BoxParams { center: Vec3::zeros(), dims: Vec3::new(1.0, 1.0, 1.0), yaw: 0.0 };
        let pred = BoxParams { dims: Vec3::new(1e6, 1.0, 3e6), ..gt };
        let v = l_dim(&pred, &gt);
        assert!(v.value.is_finite() && v.gradient.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn silog_examples() {
        let gt = DepthMap::from_vec(2, 2, vec![1.0, 2.0, 3.0, f32::INFINITY]).unwrap();
        assert_eq!(silog(&gt, &gt, 1.0).unwrap().value, 0.0);
        let doubled = DepthMap::from_vec(2, 2, gt.data.iter().map(|d| 2.0 * d).collect()).unwrap();
        assert!(silog(&doubled, &gt, 1.0).unwrap().value < 1e-12);
        let e = std::f64::consts::E;
        let gt64 = [1.0f64, 2.0, 3.0];
        // f32 rasters: feed e·gt through f32 and compare to the log ratio
        let scaled = DepthMap::from_vec(2, 2, vec![(e * gt64[0]) as f32, (e * gt64[1]) as f32, (e * gt64[2]) as f32, 1.0]).unwrap();
        let ratios: Vec<f64> = (0..3).map(|i| (scaled.data[i] as f64).ln() - (gt.data[i] as f64).ln()).collect();
        let rms = (ratios.iter().map(|g| g * g).sum::<f64>() / 3.0).sqrt();
        assert!((silog(&scaled, &gt, 0.0).unwrap().value - rms).abs() < 1e-12);
        assert!((rms - 1.0).abs() < 1e-6);
        let bad = DepthMap::from_vec(2, 2, vec![0.0, 2.0, 3.0, 1.0]).unwrap();
        assert!(matches!(silog(&bad, &gt, 1.0), Err(Error::NonPositiveDepth(_))));
    }

    #[test]
    fn pose_loss_double_cover() {
        let gt = PoseParams { translation: Vec3::new(1.0, 2.0, 3.0), quaternion: [0.5, 0.5, -0.5, 0.5], fov: 1.0 };
        assert_eq!(l_pose(&gt, &gt).value, 0.0);
        let neg = PoseParams { quaternion: gt.quaternion.map(|c| -c), ..gt };
        assert!(l_pose(&neg, &gt).value < 1e-15);
        let moved = PoseParams { translation: Vec3::new(1.0, 2.0, 5.0), ..gt };
        assert!((l_pose(&moved, &gt).value - 2.0).abs() < 1e-15);
    }

    #[test]
    fn dim_tie_is_flagged() {
        // straight and swapped assignments cost the same
        let gt = BoxParams { center: Vec3::new(0.0, 0.0, 4.0), dims: Vec3::new(1.0, 1.0, 2.0), yaw: 0.0 };
        let pred = BoxParams { dims: Vec3::new(1.5, 1.2, 1.5), ..gt };
        let check = grad_check(&DimLoss::new(gt), &pred.to_vec(), 1e-5);
        assert!(check.flagged[3] && check.flagged[5]);
        assert!(!check.flagged[0]);
    }

    #[test]
    fn total_is_linear() {
        let gt = BoxParams { center: Vec3::new(0.1, 0.2, 4.0), dims: Vec3::new(1.0, 1.3, 2.0), yaw: 0.3 };
        let pred = perturb_box(&gt, 0.2, &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1));
        let parts = [l_center(&pred, &gt), l_d(&pred, &gt), l_iou3d(&pred, &gt), l_corner(&pred, &gt), l_dim(&pred, &gt)];
        let sum = total_loss(&parts).unwrap();
        let direct = evaluate(
            &AnyLoss::Sum(vec![
                AnyLoss::Center(CenterLoss { gt }),
                AnyLoss::Depth(DepthLoss { gt }),
                AnyLoss::Iou3d(Iou3dLoss { gt }),
                AnyLoss::Corner(CornerLoss { gt, mode: ChamferMode::Euclidean }),
                AnyLoss::Dim(DimLoss::new(gt)),
            ]),
            &pred.to_vec(),
        );
        assert!((sum.value - direct.value).abs() < 1e-12);
        for (a, b) in sum.gradient.iter().zip(&direct.gradient) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(total_loss(&[]).unwrap().value, 0.0);
        let short = LossValue { value: 1.0, gradient: vec![0.0] };
        assert!(total_loss(&[parts[0].clone(), short]).is_err());
    }
}
