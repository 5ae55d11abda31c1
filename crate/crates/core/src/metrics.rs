//! Normalized error and MPJPE with the depth-flip and depth-offset
//! conventions, dataset evaluation, and latent-code export rows.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::error::TrainError;
use crate::geometry::{normalize_frame, AdaptiveScheme, NormalizedFrame};
use crate::matrix::Matrix;
use crate::networks::ModelParams;
use crate::trainer::predict_normalized;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("ground truth is zero after depth-offset removal")]
    ZeroGroundTruth,
    #[error("prediction is {pred:?} but ground truth is {gt:?}")]
    Shape { pred: (usize, usize), gt: (usize, usize) },
    #[error("root joint {root} out of range for {points} points")]
    RootOutOfRange { root: usize, points: usize },
    #[error("dataset has no ground truth")]
    MissingGroundTruth,
    #[error("no frame could be evaluated")]
    NothingEvaluated,
    #[error(transparent)]
    Model(#[from] TrainError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlipPolicy {
    /// Use whichever depth sign gives the lower error, per frame.
    PerFrameBest,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DepthOffset {
    MeanDepth,
    RootJoint(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Units {
    /// Each frame's visible 2D centroid removed and divided by its scale.
    Normalized,
    Original,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct MetricConfig {
    pub flip_policy: FlipPolicy,
    pub depth_offset: DepthOffset,
    pub units: Units,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            flip_policy: FlipPolicy::PerFrameBest,
            depth_offset: DepthOffset::MeanDepth,
            units: Units::Normalized,
        }
    }
}

/// Subtracts the reference depth from the depth row.
pub fn remove_depth_offset(shape: &Matrix, offset: DepthOffset) -> Result<Matrix, MetricError> {
    let p = shape.cols();
    let reference = match offset {
        DepthOffset::MeanDepth => shape.row(2).iter().sum::<f64>() / p as f64,
        DepthOffset::RootJoint(root) => {
            if root >= p {
                return Err(MetricError::RootOutOfRange { root, points: p });
            }
            shape[(2, root)]
        }
    };
    let mut out = shape.clone();
    for v in out.row_mut(2) {
        *v -= reference;
    }
    Ok(out)
}

/// Reflecting depth about the mean (or root) and then removing the offset is
/// the same as negating the offset-free depth row, which is exact.
fn negate_depth(shape: &Matrix) -> Matrix {
    let mut out = shape.clone();
    for v in out.row_mut(2) {
        *v = -*v;
    }
    out
}

fn prepare(pred: &Matrix, gt: &Matrix, cfg: &MetricConfig) -> Result<(Matrix, Matrix), MetricError> {
    if pred.shape() != gt.shape() || pred.rows() != 3 {
        return Err(MetricError::Shape {
            pred: pred.shape(),
            gt: gt.shape(),
        });
    }
    Ok((
        remove_depth_offset(pred, cfg.depth_offset)?,
        remove_depth_offset(gt, cfg.depth_offset)?,
    ))
}

fn best_of<F: Fn(&Matrix) -> f64>(pred: &Matrix, cfg: &MetricConfig, f: F) -> (f64, bool) {
    let plain = f(pred);
    match cfg.flip_policy {
        FlipPolicy::None => (plain, false),
        FlipPolicy::PerFrameBest => {
            let flipped = f(&negate_depth(pred));
            if flipped < plain {
                (flipped, true)
            } else {
                (plain, false)
            }
        }
    }
}

fn diff_norm(a: &Matrix, b: &Matrix) -> f64 {
    libm::sqrt(
        a.as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| (x - y) * (x - y))
            .sum(),
    )
}

fn mean_joint_distance(a: &Matrix, b: &Matrix) -> f64 {
    let p = a.cols();
    let total: f64 = (0..p)
        .map(|j| {
            let d: f64 = (0..3).map(|r| (a[(r, j)] - b[(r, j)]) * (a[(r, j)] - b[(r, j)])).sum();
            libm::sqrt(d)
        })
        .sum();
    total / p as f64
}

/// `‖S_pred − S_gt‖_F / ‖S_gt‖_F` after depth-offset removal, with the
/// optional per-frame depth flip. Returns the error and whether the flip was
/// used.
pub fn normalized_error_with_flip(pred: &Matrix, gt: &Matrix, cfg: &MetricConfig) -> Result<(f64, bool), MetricError> {
    let (p, g) = prepare(pred, gt, cfg)?;
    let denom = g.frobenius();
    if denom == 0.0 {
        return Err(MetricError::ZeroGroundTruth);
    }
    Ok(best_of(&p, cfg, |c| diff_norm(c, &g) / denom))
}

pub fn normalized_error(pred: &Matrix, gt: &Matrix, cfg: &MetricConfig) -> Result<f64, MetricError> {
    normalized_error_with_flip(pred, gt, cfg).map(|(e, _)| e)
}

/// Mean Euclidean distance per joint after depth-offset removal and the
/// optional flip.
pub fn mpjpe(pred: &Matrix, gt: &Matrix, cfg: &MetricConfig) -> Result<f64, MetricError> {
    let (p, g) = prepare(pred, gt, cfg)?;
    Ok(best_of(&p, cfg, |c| mean_joint_distance(c, &g)).0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct FrameMetrics {
    pub frame_id: usize,
    pub ne: f64,
    pub mpjpe: f64,
    pub flipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct EvalReport {
    pub config: MetricConfig,
    pub frames: Vec<FrameMetrics>,
    pub mean_ne: f64,
    pub mean_mpjpe: f64,
    /// `‖stacked error‖_F / ‖stacked ground truth‖_F` over evaluated frames.
    pub stacked_ne: f64,
    pub flips: usize,
    pub skipped: Vec<usize>,
}

impl EvalReport {
    /// Aggregates per-frame entries; `stacked` holds the summed squared error
    /// and squared ground-truth norms.
    pub fn from_frames(
        config: MetricConfig,
        frames: Vec<FrameMetrics>,
        stacked: (f64, f64),
        skipped: Vec<usize>,
    ) -> Result<Self, MetricError> {
        if frames.is_empty() {
            return Err(MetricError::NothingEvaluated);
        }
        let n = frames.len() as f64;
        let mean_ne = frames.iter().map(|f| f.ne).sum::<f64>() / n;
        let mean_mpjpe = frames.iter().map(|f| f.mpjpe).sum::<f64>() / n;
        let flips = frames.iter().filter(|f| f.flipped).count();
        Ok(Self {
            config,
            frames,
            mean_ne,
            mean_mpjpe,
            stacked_ne: libm::sqrt(stacked.0 / stacked.1),
            flips,
            skipped,
        })
    }
}

/// Ground truth in the frame's normalized units: x-y shifted by the visible
/// 2D centroid, everything divided by the frame scale.
pub fn normalize_ground_truth(gt: &Matrix, frame: &NormalizedFrame) -> Matrix {
    Matrix::from_fn(3, gt.cols(), |r, c| {
        let shift = if r < 2 { frame.centroid[r] } else { 0.0 };
        (gt[(r, c)] - shift) / frame.scale
    })
}

/// Camera-frame reconstruction of a normalized frame: the aligned decoder
/// shape with visible x-y replaced by the observations.
pub fn reconstruct(
    params: &ModelParams,
    frame: &NormalizedFrame,
    scheme: AdaptiveScheme,
) -> Result<Matrix, TrainError> {
    let pred = predict_normalized(params, frame, scheme)?;
    let mut s = pred.normalized.points;
    for j in frame.visibility.visible_indices() {
        for r in 0..2 {
            s.as_mut_slice()[r * frame.points() + j] = frame.keypoints[(r, j)];
        }
    }
    Ok(s)
}

/// Scores pre-computed camera-frame predictions (normalized units) against
/// the dataset's ground truth. `None` entries count as skipped.
pub fn evaluate_predictions(
    dataset: &Dataset,
    predictions: &[Option<Matrix>],
    cfg: &MetricConfig,
) -> Result<EvalReport, MetricError> {
    let gt = dataset.ground_truth().ok_or(MetricError::MissingGroundTruth)?;
    let mut frames = Vec::new();
    let mut skipped = Vec::new();
    let (mut err_sq, mut gt_sq) = (0.0, 0.0);
    for (i, (obs, pred)) in dataset.frames().iter().zip(predictions).enumerate() {
        let (Some(pred), Ok(nf)) = (pred, normalize_frame(obs)) else {
            skipped.push(i);
            continue;
        };
        let (pred, truth) = match cfg.units {
            Units::Normalized => (pred.clone(), normalize_ground_truth(&gt[i].points, &nf)),
            Units::Original => (
                Matrix::from_fn(3, pred.cols(), |r, c| {
                    pred[(r, c)] * nf.scale + if r < 2 { nf.centroid[r] } else { 0.0 }
                }),
                gt[i].points.clone(),
            ),
        };
        let (ne, flipped) = normalized_error_with_flip(&pred, &truth, cfg)?;
        let m = mpjpe(&pred, &truth, cfg)?;
        let (p, g) = prepare(&pred, &truth, cfg)?;
        let p = if flipped { negate_depth(&p) } else { p };
        err_sq += diff_norm(&p, &g) * diff_norm(&p, &g);
        gt_sq += g.frobenius_sq();
        frames.push(FrameMetrics {
            frame_id: obs.frame_id,
            ne,
            mpjpe: m,
            flipped,
        });
    }
    EvalReport::from_frames(*cfg, frames, (err_sq, gt_sq), skipped)
}

/// Reconstructs every frame with `params` and scores it.
pub fn evaluate(
    dataset: &Dataset,
    params: &ModelParams,
    cfg: &MetricConfig,
    scheme: AdaptiveScheme,
) -> Result<EvalReport, MetricError> {
    if dataset.ground_truth().is_none() {
        return Err(MetricError::MissingGroundTruth);
    }
    let predictions: Vec<Option<Matrix>> = dataset
        .frames()
        .iter()
        .map(|f| {
            normalize_frame(f)
                .ok()
                .and_then(|nf| reconstruct(params, &nf, scheme).ok())
        })
        .collect();
    evaluate_predictions(dataset, &predictions, cfg)
}

/// `(frame id, φ)` for every frame: stored codes in free-code mode, `h(W̃)`
/// in lifting mode. Frames that cannot be normalized are left out in lifting
/// mode.
pub fn latent_rows(dataset: &Dataset, params: &ModelParams) -> Vec<(usize, Vec<f64>)> {
    if let Some(codes) = params.codes() {
        return (0..codes.rows()).map(|i| (i, codes.row(i).to_vec())).collect();
    }
    dataset
        .frames()
        .iter()
        .filter_map(|f| {
            let nf = normalize_frame(f).ok()?;
            params.lift(&nf).ok().map(|c| (f.frame_id, c))
        })
        .collect()
}

/// Mean distance between consecutive codes divided by the mean distance over
/// all pairs. Lower means the codes trace a smoother path in frame order.
pub fn temporal_smoothness(codes: &[Vec<f64>]) -> f64 {
    let dist = |a: &[f64], b: &[f64]| libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum());
    let n = codes.len();
    if n < 3 {
        return 0.0;
    }
    let consecutive = codes.windows(2).map(|w| dist(&w[0], &w[1])).sum::<f64>() / (n - 1) as f64;
    let mut pair_sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            pair_sum += dist(&codes[i], &codes[j]);
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    let mean_pair = pair_sum / pairs;
    if mean_pair == 0.0 {
        0.0
    } else {
        consecutive / mean_pair
    }
}
