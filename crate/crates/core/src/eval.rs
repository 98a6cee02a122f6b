//! Multi-clip, multi-scale inference, accuracy reports and classwise
//! invariant-vs-distinctive accuracy deltas.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{center_crop_resize, frame_window, VideoInstance};
use crate::encoder::{EncoderWeights, PredictionVector};
use crate::error::{Error, Result};
use crate::scalar::argmax;

/// Relative side lengths of the center crops used at inference.
pub const SCALES: [f64; 3] = [1.0, 0.875, 0.75];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Protocol {
    pub num_clips: usize,
    pub num_scales: usize,
    pub clip_len: usize,
}

/// Start frames of `num_clips` uniformly spaced clips:
/// `floor(k (T - F) / (num_clips - 1))`, or `[0]` for a single clip.
pub fn clip_starts(t: usize, f: usize, num_clips: usize) -> Result<Vec<usize>> {
    if f == 0 || t < f {
        return Err(Error::Sampling(format!("video of {t} frames is shorter than a clip of {f}")));
    }
    if num_clips == 0 {
        return Err(Error::Argument("num_clips must be at least 1".into()));
    }
    if num_clips == 1 {
        return Ok(vec![0]);
    }
    Ok((0..num_clips).map(|k| k * (t - f) / (num_clips - 1)).collect())
}

/// Mean softmax output over every clip and scale of the protocol.
pub fn predict_video(
    weights: &EncoderWeights<f32>,
    video: &VideoInstance,
    protocol: &Protocol,
) -> Result<PredictionVector<f32>> {
    if !(1..=SCALES.len()).contains(&protocol.num_scales) {
        return Err(Error::Argument(format!("num_scales must be in 1..={}", SCALES.len())));
    }
    let starts = clip_starts(video.num_frames(), protocol.clip_len, protocol.num_clips)?;
    let size = weights.config.input_size;
    let views: Vec<(usize, f64)> = starts
        .iter()
        .flat_map(|&s| SCALES[..protocol.num_scales].iter().map(move |&sc| (s, sc)))
        .collect();
    let probs = views
        .par_iter()
        .map(|&(start, scale)| {
            let clip = frame_window(video, start, protocol.clip_len)?;
            let view = center_crop_resize(&clip, scale, size, size);
            Ok(weights.classify(&weights.encode_clip(&view)?.pooled).p)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PredictionVector {
        p: mean_rows(&probs),
    })
}

/// Element-wise mean, summed in index order.
fn mean_rows(rows: &[Vec<f32>]) -> Vec<f32> {
    let mut sum = vec![0f32; rows[0].len()];
    for r in rows {
        for (s, &v) in sum.iter_mut().zip(r) {
            *s += v;
        }
    }
    let count = rows.len() as f32;
    sum.iter().map(|&s| s / count).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub top1: f64,
    pub per_class: BTreeMap<usize, ClassAccuracy>,
    pub num_videos: usize,
    pub protocol: Protocol,
}

impl EvalReport {
    /// Builds a report from `(true class, predicted probabilities)` pairs.
    /// Argmax ties resolve to the lowest class index.
    pub fn from_predictions(preds: &[(usize, Vec<f32>)], protocol: Protocol) -> Result<Self> {
        if preds.is_empty() {
            return Err(Error::Argument("cannot evaluate an empty test set".into()));
        }
        let mut per_class: BTreeMap<usize, ClassAccuracy> = BTreeMap::new();
        let mut correct = 0;
        for (y, p) in preds {
            let hit = argmax(p) == *y;
            correct += usize::from(hit);
            let e = per_class.entry(*y).or_insert(ClassAccuracy {
                correct: 0,
                total: 0,
                accuracy: 0.0,
            });
            e.total += 1;
            e.correct += usize::from(hit);
        }
        for e in per_class.values_mut() {
            e.accuracy = e.correct as f64 / e.total as f64;
        }
        Ok(Self {
            top1: correct as f64 / preds.len() as f64,
            per_class,
            num_videos: preds.len(),
            protocol,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Load {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

/// Top-1 accuracy of `weights` on a labeled test set.
pub fn evaluate(weights: &EncoderWeights<f32>, test_set: &[VideoInstance], protocol: &Protocol) -> Result<EvalReport> {
    let preds = test_set
        .par_iter()
        .map(|v| {
            let y = v
                .label
                .ok_or_else(|| Error::contract(format!("test video {} has no label", v.id)))?;
            Ok((y, predict_video(weights, v, protocol)?.p))
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_predictions(&preds, *protocol)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaTable {
    /// `(class, acc_D - acc_I)` sorted by delta descending, ties by class.
    pub sorted: Vec<(usize, f64)>,
    pub k: usize,
}

impl DeltaTable {
    pub fn top(&self) -> &[(usize, f64)] {
        &self.sorted[..self.k.min(self.sorted.len())]
    }

    pub fn bottom(&self) -> &[(usize, f64)] {
        let len = self.sorted.len();
        &self.sorted[len - self.k.min(len)..]
    }

    /// `class,class_name,delta,extreme` rows for every class.
    pub fn to_csv(&self, class_names: &[String]) -> String {
        let len = self.sorted.len();
        let k = self.k.min(len);
        let mut out = String::from("class,class_name,delta,extreme\n");
        for (rank, &(c, d)) in self.sorted.iter().enumerate() {
            let extreme = if rank < k {
                "top"
            } else if rank >= len - k {
                "bottom"
            } else {
                ""
            };
            let name = class_names.get(c).map(String::as_str).unwrap_or("");
            out.push_str(&format!("{c},{name},{d:?},{extreme}\n"));
        }
        out
    }
}

/// Per-class accuracy of the distinctive model minus that of the invariant
/// model, sorted descending.
pub fn classwise_delta(report_d: &EvalReport, report_i: &EvalReport, k: usize) -> Result<DeltaTable> {
    if !report_d.per_class.keys().eq(report_i.per_class.keys()) {
        return Err(Error::Argument("reports cover different class sets".into()));
    }
    let mut sorted: Vec<(usize, f64)> = report_d
        .per_class
        .iter()
        .map(|(&c, a)| (c, a.accuracy - report_i.per_class[&c].accuracy))
        .collect();
    sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(DeltaTable { sorted, k })
}

/// One-sided sign-test p-value `P(X >= successes)` for `X ~ Bin(trials, 1/2)`.
pub fn sign_test_p(successes: usize, trials: usize) -> f64 {
    let mut p = 0.0;
    for x in successes..=trials {
        p += binomial(trials, x) * 0.5f64.powi(trials as i32);
    }
    p
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}
