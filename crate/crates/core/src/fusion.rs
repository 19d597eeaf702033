//! Ensemble detection fusion.
//!
//! Groups the per-frame boxes of an ensemble of `T` detectors into object
//! clusters with a one-pass sequential scheme (each detector contributes at
//! most one box per cluster), then fuses every cluster into a single object
//! carrying spatial-uncertainty statistics and per-category mean scores.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FusionError {
    #[error("invalid bounding box [{x1}, {y1}, {x2}, {y2}]: corners must be finite with x1 < x2 and y1 < y2")]
    InvalidBox { x1: f64, y1: f64, x2: f64, y2: f64 },
    #[error("score {value} at index {index} outside [0, 1]")]
    InvalidScore { index: usize, value: f64 },
    #[error("duplicate network id {0} in frame")]
    DuplicateNetwork(u32),
    #[error("inconsistent frame ids in one frame: {0} vs {1}")]
    InconsistentFrame(i64, i64),
    #[error("detections disagree on category count: {0} vs {1}")]
    ScoreLengthMismatch(usize, usize),
}

/// Axis-aligned box in pixel coordinates, `x1 < x2`, `y1 < y2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, FusionError> {
        let finite = x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite();
        if !finite || x1 >= x2 || y1 >= y2 {
            return Err(FusionError::InvalidBox { x1, y1, x2, y2 });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn corners(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = FusionError;

    fn try_from(c: [f64; 4]) -> Result<Self, Self::Error> {
        Self::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.corners()
    }
}

/// Intersection over union of two boxes; 0 when disjoint.
///
/// Degenerate (zero-area) boxes cannot be constructed, so the ratio is
/// always well defined and lies in [0, 1].
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let iy = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    inter / union
}

/// One detector's post-NMS box with its per-category logistic scores.
///
/// Scores are independent per category and need not sum to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDetection")]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub scores: Vec<f64>,
}

#[derive(Deserialize)]
struct RawDetection {
    #[serde(rename = "box")]
    bbox: BoundingBox,
    scores: Vec<f64>,
}

impl TryFrom<RawDetection> for Detection {
    type Error = FusionError;

    fn try_from(raw: RawDetection) -> Result<Self, Self::Error> {
        Detection::new(raw.bbox, raw.scores)
    }
}

impl Detection {
    pub fn new(bbox: BoundingBox, scores: Vec<f64>) -> Result<Self, FusionError> {
        for (index, &value) in scores.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) || value.is_nan() {
                return Err(FusionError::InvalidScore { index, value });
            }
        }
        Ok(Self { bbox, scores })
    }

    /// Category with the highest score, ties broken toward the lowest index.
    pub fn winning_label(&self) -> usize {
        argmax(&self.scores)
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// All boxes one detector produced for one frame. Detections are assumed
/// post-NMS (each detector runs its own NMS upstream).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkFramePredictions {
    pub network_id: u32,
    pub frame_id: i64,
    pub detections: Vec<Detection>,
}

/// A group of detections believed to be the same object, at most one per
/// detector. Always non-empty by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    members: Vec<(u32, Detection)>,
    box_sum: [f64; 4],
    score_sum: Vec<f64>,
}

impl Cluster {
    fn seed(network_id: u32, det: Detection) -> Self {
        Self {
            box_sum: det.bbox.corners(),
            score_sum: det.scores.clone(),
            members: vec![(network_id, det)],
        }
    }

    fn push(&mut self, network_id: u32, det: Detection) {
        for (sum, c) in self.box_sum.iter_mut().zip(det.bbox.corners()) {
            *sum += c;
        }
        for (sum, &s) in self.score_sum.iter_mut().zip(&det.scores) {
            *sum += s;
        }
        self.members.push((network_id, det));
    }

    pub fn members(&self) -> &[(u32, Detection)] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Running mean of member boxes; affinity is evaluated against this.
    pub fn representative_box(&self) -> BoundingBox {
        let d = self.members.len() as f64;
        BoundingBox {
            x1: self.box_sum[0] / d,
            y1: self.box_sum[1] / d,
            x2: self.box_sum[2] / d,
            y2: self.box_sum[3] / d,
        }
    }

    /// Argmax of the running mean scores, ties toward the lowest index.
    pub fn winning_label(&self) -> usize {
        argmax(&self.score_sum)
    }
}

/// Affinity gate: IoU against the cluster's running-mean box must reach
/// `theta_aff` AND the detection's winning label must match the cluster's.
pub fn affinity(det: &Detection, cluster: &Cluster, theta_aff: f64) -> bool {
    assert_eq!(
        det.scores.len(),
        cluster.score_sum.len(),
        "detection and cluster must share the category count"
    );
    iou(&det.bbox, &cluster.representative_box()) >= theta_aff
        && det.winning_label() == cluster.winning_label()
}

/// One-pass sequential clustering with intra-sample exclusivity.
///
/// Boxes of the lowest-numbered network seed the clusters. Each later
/// network's boxes are assigned, in input order, to the first matching
/// cluster not yet used by that network; unmatched boxes open new clusters.
/// A cluster opened while a network is being processed already holds a box
/// from it and only becomes available to later networks.
///
/// The result depends on network and box order by construction; networks are
/// processed in ascending `network_id` regardless of slice order.
pub fn cluster_frame(
    frame: &[NetworkFramePredictions],
    theta_aff: f64,
) -> Result<Vec<Cluster>, FusionError> {
    let mut samples: Vec<&NetworkFramePredictions> = frame.iter().collect();
    samples.sort_by_key(|s| s.network_id);
    for pair in samples.windows(2) {
        if pair[0].network_id == pair[1].network_id {
            return Err(FusionError::DuplicateNetwork(pair[0].network_id));
        }
        if pair[0].frame_id != pair[1].frame_id {
            return Err(FusionError::InconsistentFrame(
                pair[0].frame_id,
                pair[1].frame_id,
            ));
        }
    }
    let mut score_len: Option<usize> = None;
    for sample in &samples {
        for det in &sample.detections {
            match score_len {
                None => score_len = Some(det.scores.len()),
                Some(n) if n != det.scores.len() => {
                    return Err(FusionError::ScoreLengthMismatch(n, det.scores.len()))
                }
                _ => {}
            }
        }
    }

    let mut clusters: Vec<Cluster> = Vec::new();
    for (si, sample) in samples.iter().enumerate() {
        if si == 0 {
            clusters.extend(
                sample
                    .detections
                    .iter()
                    .map(|det| Cluster::seed(sample.network_id, det.clone())),
            );
            continue;
        }
        // Exclusivity flags cover the clusters that exist when this sample
        // starts; clusters opened below are unavailable until the next one.
        let mut used = vec![false; clusters.len()];
        for det in &sample.detections {
            let slot = (0..used.len())
                .find(|&k| !used[k] && affinity(det, &clusters[k], theta_aff));
            match slot {
                Some(k) => {
                    clusters[k].push(sample.network_id, det.clone());
                    used[k] = true;
                }
                None => clusters.push(Cluster::seed(sample.network_id, det.clone())),
            }
        }
    }
    Ok(clusters)
}

/// Final perception result for one cluster: per-corner mean box and
/// population standard deviations, per-category mean scores over the `d`
/// members present, and the winning label with its confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedObject {
    pub mean_box: BoundingBox,
    pub corner_std: [f64; 4],
    pub mean_scores: Vec<f64>,
    pub d: usize,
    pub winning_label: usize,
    pub confidence: f64,
}

/// Fuse a cluster into its final object. Singleton clusters get zero
/// corner deviations (population statistics).
pub fn fuse(cluster: &Cluster) -> FusedObject {
    let d = cluster.len() as f64;
    let mean_box = cluster.representative_box();
    let mean_corners = mean_box.corners();

    let mut var = [0.0f64; 4];
    for (_, det) in cluster.members() {
        for (i, c) in det.bbox.corners().iter().enumerate() {
            let diff = c - mean_corners[i];
            var[i] += diff * diff;
        }
    }
    let corner_std = var.map(|v| (v / d).sqrt());

    let mean_scores: Vec<f64> = cluster.score_sum.iter().map(|s| s / d).collect();
    let winning_label = argmax(&mean_scores);
    FusedObject {
        mean_box,
        corner_std,
        confidence: mean_scores[winning_label],
        mean_scores,
        d: cluster.len(),
        winning_label,
    }
}

/// Cluster a frame and fuse every cluster, in cluster creation order.
pub fn fuse_frame(
    frame: &[NetworkFramePredictions],
    theta_aff: f64,
) -> Result<Vec<FusedObject>, FusionError> {
    Ok(cluster_frame(frame, theta_aff)?.iter().map(fuse).collect())
}
