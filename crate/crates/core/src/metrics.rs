//! Detection and temporal-consistency metrics.
//!
//! Matching is greedy: predictions in descending score order (ties keep
//! input order) take the unmatched ground-truth box of highest 3D IoU in
//! the same sequence and frame, provided the IoU reaches the threshold and
//! the categories agree when both are known. Average precision integrates
//! the all-points precision envelope over recall.

use crate::clip::SequenceClip;
use crate::geometry::{chamfer, iou3d, Vec3};
use crate::io::{gt_as_predictions, PredictionRecord};
use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::fmt::Write;

/// IoU thresholds of the average-precision sweep: 0.05, 0.10, …, 0.50.
pub const AP_THRESHOLDS: [f64; 10] = [0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50];
pub const F1_THRESHOLDS: [f64; 2] = [0.25, 0.5];

/// Divisor of the per-instance variance sums.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceNormalization {
    /// Frames in which the instance is predicted; missing frames are skipped.
    #[default]
    PredictedFrames,
    /// Frames in which the instance is annotated; missing frames add zero
    /// but still count.
    AnnotatedFrames,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Minimum score for F1 and the variance metrics.
    pub score_min: f64,
    /// Require equal categories when both sides carry one.
    pub match_categories: bool,
    pub normalization: VarianceNormalization,
    /// Adds a per-category AP breakdown.
    pub per_category: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { score_min: 0.5, match_categories: true, normalization: VarianceNormalization::PredictedFrames, per_category: false }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.score_min) {
            return Err(Error::Config(format!("score_min {} outside [0, 1]", self.score_min)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MatchResult {
    /// (prediction index, ground-truth index, IoU).
    pub pairs: Vec<(usize, usize, f64)>,
    pub unmatched_predictions: Vec<usize>,
    pub unmatched_gts: Vec<usize>,
}

/// Pairwise IoUs between predictions and ground truth sharing a sequence,
/// frame and (optionally) category, plus the score order of predictions.
pub struct Matcher {
    order: Vec<usize>,
    /// Per prediction, candidate (gt index, IoU) with IoU > 0.
    candidates: Vec<Vec<(usize, f64)>>,
    n_gt: usize,
}

fn categories_agree(p: &PredictionRecord, g: &PredictionRecord, enforce: bool) -> bool {
    match (&p.category, &g.category) {
        (Some(a), Some(b)) if enforce => a == b,
        _ => true,
    }
}

impl Matcher {
    pub fn new(preds: &[PredictionRecord], gts: &[PredictionRecord], match_categories: bool) -> Self {
        let mut by_frame: HashMap<(&str, usize), Vec<usize>> = HashMap::new();
        for (i, g) in gts.iter().enumerate() {
            by_frame.entry((g.sequence_id.as_str(), g.frame_index)).or_default().push(i);
        }
        let candidates = preds
            .par_iter()
            .map(|p| {
                by_frame
                    .get(&(p.sequence_id.as_str(), p.frame_index))
                    .map(|idx| {
                        idx.iter()
                            .filter(|&&g| categories_agree(p, &gts[g], match_categories))
                            .map(|&g| (g, iou3d(&p.bbox, &gts[g].bbox)))
                            .filter(|c| c.1 > 0.0)
                            .collect()
                    })
                    .unwrap_or_default()
            })
            .collect();
        let mut order: Vec<usize> = (0..preds.len()).collect();
        order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score).then(a.cmp(&b)));
        Self { order, candidates, n_gt: gts.len() }
    }

    /// Greedy matching at `tau`, restricted to predictions passing `keep`.
    pub fn match_at(&self, tau: f64, keep: impl Fn(usize) -> bool) -> MatchResult {
        let mut taken = vec![false; self.n_gt];
        let mut out = MatchResult::default();
        for &p in self.order.iter().filter(|&&p| keep(p)) {
            let mut best: Option<(usize, f64)> = None;
            for &(g, iou) in &self.candidates[p] {
                if !taken[g] && iou >= tau && best.is_none_or(|b| iou > b.1) {
                    best = Some((g, iou));
                }
            }
            match best {
                Some((g, iou)) => {
                    taken[g] = true;
                    out.pairs.push((p, g, iou));
                }
                None => out.unmatched_predictions.push(p),
            }
        }
        out.unmatched_gts = (0..self.n_gt).filter(|&g| !taken[g]).collect();
        out
    }

    /// True-positive flags in descending score order.
    fn tp_flags(&self, tau: f64) -> Vec<bool> {
        let m = self.match_at(tau, |_| true);
        let mut tp = vec![false; self.candidates.len()];
        for &(p, _, _) in &m.pairs {
            tp[p] = true;
        }
        self.order.iter().map(|&p| tp[p]).collect()
    }
}

pub fn match_predictions(preds: &[PredictionRecord], gts: &[PredictionRecord], tau: f64, match_categories: bool) -> MatchResult {
    Matcher::new(preds, gts, match_categories).match_at(tau, |_| true)
}

/// Area under the all-points precision envelope for true-positive flags in
/// score order and `n_gt` ground-truth boxes. Zero without ground truth.
pub fn average_precision(tp: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut recall = vec![0.0];
    let mut precision = vec![0.0];
    let mut hits = 0usize;
    for (i, &t) in tp.iter().enumerate() {
        hits += t as usize;
        recall.push(hits as f64 / n_gt as f64);
        precision.push(hits as f64 / (i + 1) as f64);
    }
    recall.push(1.0);
    precision.push(0.0);
    for i in (0..precision.len() - 1).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    (1..recall.len()).map(|i| (recall[i] - recall[i - 1]) * precision[i]).sum()
}

/// AP at each threshold of [`AP_THRESHOLDS`] and their mean.
pub fn ap3d(preds: &[PredictionRecord], gts: &[PredictionRecord], match_categories: bool) -> (Vec<f64>, f64) {
    let m = Matcher::new(preds, gts, match_categories);
    let aps: Vec<f64> = AP_THRESHOLDS.iter().map(|&t| average_precision(&m.tp_flags(t), gts.len())).collect();
    let mean = aps.iter().sum::<f64>() / aps.len() as f64;
    (aps, mean)
}

/// `2TP / (2TP + FP + FN)`, zero without true positives.
pub fn f1_score(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

pub fn f1_at_iou(preds: &[PredictionRecord], gts: &[PredictionRecord], tau: f64, cfg: &MetricsConfig) -> f64 {
    let m = Matcher::new(preds, gts, cfg.match_categories).match_at(tau, |p| preds[p].score >= cfg.score_min);
    f1_score(m.pairs.len(), m.unmatched_predictions.len(), m.unmatched_gts.len())
}

/// `(Var_v, Var_c)` of one instance from its world-frame boxes: the mean
/// Chamfer distance between each box's corners and the per-corner mean
/// box, and the mean distance between centroids. `divisor` overrides the
/// number of boxes (see [`VarianceNormalization`]).
pub fn variance_metrics(world_corners: &[[Vec3; 8]], divisor: Option<usize>) -> Result<(f64, f64)> {
    if world_corners.is_empty() {
        return Err(Error::EmptySet);
    }
    let n = world_corners.len() as f64;
    let mean: [Vec3; 8] = std::array::from_fn(|c| world_corners.iter().fold(Vec3::zeros(), |acc, b| acc + b[c]).scale(1.0 / n));
    let centroid = |b: &[Vec3; 8]| b.iter().fold(Vec3::zeros(), |acc, &p| acc + p).scale(1.0 / 8.0);
    let mean_c = centroid(&mean);
    let (mut var_v, mut var_c) = (0.0, 0.0);
    for b in world_corners {
        var_v += chamfer(b, &mean)?;
        var_c += (centroid(b) - mean_c).norm();
    }
    let d = divisor.unwrap_or(world_corners.len()).max(1) as f64;
    Ok((var_v / d, var_c / d))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCounts {
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub thresholds: Vec<f64>,
    pub ap: Vec<f64>,
    pub ap_mean: f64,
    /// (IoU threshold, F1).
    pub f1: Vec<(f64, f64)>,
    /// Meters; absent when instance identities cannot be aligned.
    pub var_v: Option<f64>,
    pub var_c: Option<f64>,
    pub variance_note: Option<String>,
    /// Counts at every AP threshold, over all predictions.
    pub counts: Vec<ThresholdCounts>,
    pub n_predictions: usize,
    pub n_gt: usize,
    pub n_instances: usize,
    pub per_category: Option<BTreeMap<String, f64>>,
}

impl MetricsReport {
    /// One `metric<TAB>value` row per metric.
    pub fn table(&self) -> String {
        let mut s = String::from("metric\tvalue\n");
        let _ = writeln!(s, "ap3d_mean\t{:.6}", self.ap_mean);
        for (t, ap) in self.thresholds.iter().zip(&self.ap) {
            let _ = writeln!(s, "ap3d@{t:.2}\t{ap:.6}");
        }
        for (t, f) in &self.f1 {
            let _ = writeln!(s, "f1@{t:.2}\t{f:.6}");
        }
        let opt = |v: Option<f64>| v.map_or("absent".to_string(), |v| format!("{v:.6}"));
        let _ = writeln!(s, "var_v\t{}", opt(self.var_v));
        let _ = writeln!(s, "var_c\t{}", opt(self.var_c));
        let _ = writeln!(s, "n_predictions\t{}", self.n_predictions);
        let _ = writeln!(s, "n_gt\t{}", self.n_gt);
        let _ = writeln!(s, "n_instances\t{}", self.n_instances);
        if let Some(per) = &self.per_category {
            for (c, ap) in per {
                let _ = writeln!(s, "ap3d_mean[{c}]\t{ap:.6}");
            }
        }
        s
    }
}

/// World-frame corner sets per (sequence, instance), using ground-truth
/// poses, and the annotated frame count of each instance.
#[allow(clippy::type_complexity)]
fn instance_tracks(
    preds: &[PredictionRecord],
    clips: &[&SequenceClip],
    score_min: f64,
) -> Result<BTreeMap<(String, u32), (Vec<[Vec3; 8]>, usize)>> {
    let by_id: HashMap<&str, &SequenceClip> = clips.iter().map(|c| (c.sequence_id.as_str(), *c)).collect();
    // best-scoring prediction per (sequence, frame, instance)
    let mut best: BTreeMap<(String, u32, usize), &PredictionRecord> = BTreeMap::new();
    for (row, p) in preds.iter().enumerate().filter(|(_, p)| p.score >= score_min) {
        let clip = by_id
            .get(p.sequence_id.as_str())
            .ok_or_else(|| Error::InstanceMismatch(format!("prediction {row}: unknown sequence `{}`", p.sequence_id)))?;
        if p.frame_index >= clip.len() {
            return Err(Error::InstanceMismatch(format!("prediction {row}: no frame {} in `{}`", p.frame_index, p.sequence_id)));
        }
        if !clip.frames.iter().any(|f| f.objects.iter().any(|o| o.instance_id == p.instance_id)) {
            return Err(Error::InstanceMismatch(format!(
                "prediction {row}: instance {} is not annotated in `{}`",
                p.instance_id, p.sequence_id
            )));
        }
        let key = (p.sequence_id.clone(), p.instance_id, p.frame_index);
        if best.get(&key).is_none_or(|q| p.score > q.score) {
            best.insert(key, p);
        }
    }
    let mut tracks: BTreeMap<(String, u32), (Vec<[Vec3; 8]>, usize)> = BTreeMap::new();
    for ((seq, id, frame), p) in best {
        let clip = by_id[seq.as_str()];
        let world = p.bbox.transformed(&clip.frames[frame].pose).corners();
        let entry = tracks.entry((seq, id)).or_insert_with(|| {
            let annotated = clip.frames.iter().filter(|f| f.objects.iter().any(|o| o.instance_id == id)).count();
            (Vec::new(), annotated)
        });
        entry.0.push(world);
    }
    Ok(tracks)
}

/// Dataset-level metrics of `preds` against the annotations of `clips`.
pub fn evaluate(preds: &[PredictionRecord], clips: &[SequenceClip], cfg: &MetricsConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    let mut clips: Vec<&SequenceClip> = clips.iter().collect();
    clips.sort_by(|a, b| a.sequence_id.cmp(&b.sequence_id));
    let gts: Vec<PredictionRecord> = clips.iter().flat_map(|c| gt_as_predictions(c)).collect();
    let matcher = Matcher::new(preds, &gts, cfg.match_categories);

    let mut ap = Vec::with_capacity(AP_THRESHOLDS.len());
    let mut counts = Vec::with_capacity(AP_THRESHOLDS.len());
    for &t in &AP_THRESHOLDS {
        let m = matcher.match_at(t, |_| true);
        let mut tp = vec![false; preds.len()];
        m.pairs.iter().for_each(|&(p, _, _)| tp[p] = true);
        let flags: Vec<bool> = matcher.order.iter().map(|&p| tp[p]).collect();
        ap.push(average_precision(&flags, gts.len()));
        counts.push(ThresholdCounts { threshold: t, tp: m.pairs.len(), fp: m.unmatched_predictions.len(), fn_: m.unmatched_gts.len() });
    }
    let ap_mean = ap.iter().sum::<f64>() / ap.len() as f64;
    let f1 = F1_THRESHOLDS
        .iter()
        .map(|&t| {
            let m = matcher.match_at(t, |p| preds[p].score >= cfg.score_min);
            (t, f1_score(m.pairs.len(), m.unmatched_predictions.len(), m.unmatched_gts.len()))
        })
        .collect();

    let (mut var_v, mut var_c, mut note, mut n_instances) = (None, None, None, 0);
    match instance_tracks(preds, &clips, cfg.score_min) {
        Ok(tracks) if !tracks.is_empty() => {
            let per: Vec<(f64, f64)> = tracks
                .values()
                .map(|(boxes, annotated)| {
                    let divisor = match cfg.normalization {
                        VarianceNormalization::PredictedFrames => None,
                        VarianceNormalization::AnnotatedFrames => Some(*annotated),
                    };
                    variance_metrics(boxes, divisor)
                })
                .collect::<Result<_>>()?;
            n_instances = per.len();
            var_v = Some(per.iter().map(|p| p.0).sum::<f64>() / n_instances as f64);
            var_c = Some(per.iter().map(|p| p.1).sum::<f64>() / n_instances as f64);
        }
        Ok(_) => note = Some("no predictions above the score threshold".to_string()),
        Err(e @ Error::InstanceMismatch(_)) => {
            log::warn!("variance metrics unavailable: {e}");
            note = Some(e.to_string());
        }
        Err(e) => return Err(e),
    }

    let per_category = cfg.per_category.then(|| {
        let mut cats: Vec<&str> = gts.iter().filter_map(|g| g.category.as_deref()).collect();
        cats.sort_unstable();
        cats.dedup();
        cats.into_iter()
            .map(|c| {
                let p: Vec<PredictionRecord> = preds.iter().filter(|p| p.category.as_deref() == Some(c)).cloned().collect();
                let g: Vec<PredictionRecord> = gts.iter().filter(|g| g.category.as_deref() == Some(c)).cloned().collect();
                (c.to_string(), ap3d(&p, &g, cfg.match_categories).1)
            })
            .collect()
    });

    Ok(MetricsReport {
        thresholds: AP_THRESHOLDS.to_vec(),
        ap,
        ap_mean,
        f1,
        var_v,
        var_c,
        variance_note: note,
        counts,
        n_predictions: preds.len(),
        n_gt: gts.len(),
        n_instances,
        per_category,
    })
}

/// Copies of `preds` with i.i.d. Gaussian noise of standard deviation
/// `sigma` (meters) added to every box center.
pub fn perturb_centers(preds: &[PredictionRecord], sigma: f64, seed: u64) -> Result<Vec<PredictionRecord>> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidInput(format!("noise sigma {sigma}: {e}")))?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Ok(preds
        .iter()
        .map(|p| {
            let mut q = p.clone();
            let n = Vec3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng));
            q.bbox.center = q.bbox.center + n;
            q
        })
        .collect())
}
