//! Mask IoU and COCO-style average precision.
//!
//! Matching runs per category and per IoU threshold: predictions are visited
//! by descending score (ties keep input order) and each takes the unmatched
//! ground truth of the same image with the highest IoU at or above the
//! threshold (ties go to the lower index). Precision is made monotone and
//! sampled at the 101 recall levels `0.00, 0.01, ..., 1.00`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fitter::FitResult;
use crate::types::BinaryMask;

/// `|a & b| / |a | b|`; two empty masks score 1.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let (inter, union) = overlap(a, b)?;
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// `2 |a & b| / (|a| + |b|)`; two empty masks score 1.
pub fn dice_coefficient(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let (inter, _) = overlap(a, b)?;
    let total = a.area() + b.area();
    Ok(if total == 0 { 1.0 } else { 2.0 * inter as f64 / total as f64 })
}

fn overlap(a: &BinaryMask, b: &BinaryMask) -> Result<(usize, usize)> {
    a.same_shape(b.width(), b.height())?;
    let mut inter = 0;
    let mut union = 0;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        inter += (x & y) as usize;
        union += (x | y) as usize;
    }
    Ok((inter, union))
}

/// A predicted instance.
#[derive(Debug, Clone)]
pub struct ScoredInstance {
    /// Instances only match within the same image.
    pub image: usize,
    pub category: u32,
    pub score: f64,
    pub mask: BinaryMask,
}

/// A ground-truth instance.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub image: usize,
    pub category: u32,
    pub mask: BinaryMask,
}

/// `0.50, 0.55, ..., 0.95`.
pub fn default_thresholds() -> Vec<f64> {
    (0..10).map(|k| (50 + 5 * k) as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdStats {
    pub threshold: f64,
    pub ap: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryReport {
    pub category: u32,
    /// Mean AP over all thresholds.
    pub ap: f64,
    /// AP at IoU 0.50 (NaN when 0.50 is not among the thresholds).
    pub ap50: f64,
    pub per_threshold: Vec<ThresholdStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub thresholds: Vec<f64>,
    /// Evaluated categories in ascending id order. Categories without ground
    /// truth are skipped.
    pub categories: Vec<CategoryReport>,
    pub mean_ap: f64,
    pub mean_ap50: f64,
    /// Predictions with an empty mask, dropped before matching.
    pub dropped_empty: usize,
}

impl EvalReport {
    fn stats50(c: &CategoryReport) -> &ThresholdStats {
        c.per_threshold
            .iter()
            .find(|t| t.threshold == 0.5)
            .unwrap_or(&c.per_threshold[0])
    }

    /// `category,AP,AP50,TP,FP,FN` with counts taken at IoU 0.50, followed by
    /// a macro-average row labelled `all`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("category,AP,AP50,TP,FP,FN\n");
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for c in &self.categories {
            let s = Self::stats50(c);
            tp += s.tp;
            fp += s.fp;
            fn_ += s.fn_;
            out.push_str(&format!(
                "{},{:.6},{:.6},{},{},{}\n",
                c.category, c.ap, c.ap50, s.tp, s.fp, s.fn_
            ));
        }
        out.push_str(&format!(
            "all,{:.6},{:.6},{tp},{fp},{fn_}\n",
            self.mean_ap, self.mean_ap50
        ));
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Average precision over `thresholds` for every category with ground truth.
pub fn average_precision(
    preds: &[ScoredInstance],
    gts: &[GroundTruth],
    thresholds: &[f64],
) -> Result<EvalReport> {
    if thresholds.is_empty() {
        return Err(Error::contract("need at least one IoU threshold"));
    }
    if let Some(t) = thresholds.iter().find(|&&t| !(t > 0.0 && t <= 1.0)) {
        return Err(Error::contract(format!("IoU threshold {t} outside (0, 1]")));
    }
    if let Some(p) = preds.iter().find(|p| !p.score.is_finite()) {
        return Err(Error::contract(format!("non-finite prediction score {}", p.score)));
    }

    let kept: Vec<&ScoredInstance> = preds.iter().filter(|p| !p.mask.is_empty()).collect();
    let dropped_empty = preds.len() - kept.len();

    let mut categories: Vec<u32> = gts.iter().map(|g| g.category).collect();
    categories.sort_unstable();
    categories.dedup();

    let mut reports = Vec::with_capacity(categories.len());
    for &cat in &categories {
        let mut cp: Vec<&ScoredInstance> = kept.iter().copied().filter(|p| p.category == cat).collect();
        // stable: equal scores keep input order
        cp.sort_by(|a, b| b.score.total_cmp(&a.score));
        let cg: Vec<&GroundTruth> = gts.iter().filter(|g| g.category == cat).collect();

        let ious: Vec<Vec<Option<f64>>> = cp
            .iter()
            .map(|p| {
                cg.iter()
                    .map(|g| {
                        if p.image == g.image {
                            iou(&p.mask, &g.mask).map(Some)
                        } else {
                            Ok(None)
                        }
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;

        let per_threshold: Vec<ThresholdStats> = thresholds
            .iter()
            .map(|&t| {
                let hits = greedy_match(&ious, cg.len(), t);
                let tp = hits.iter().filter(|&&h| h).count();
                ThresholdStats {
                    threshold: t,
                    ap: interpolated_ap(&hits, cg.len()),
                    tp,
                    fp: hits.len() - tp,
                    fn_: cg.len() - tp,
                }
            })
            .collect();
        let ap = per_threshold.iter().map(|s| s.ap).sum::<f64>() / per_threshold.len() as f64;
        let ap50 = per_threshold
            .iter()
            .find(|s| s.threshold == 0.5)
            .map_or(f64::NAN, |s| s.ap);
        reports.push(CategoryReport {
            category: cat,
            ap,
            ap50,
            per_threshold,
        });
    }

    let macro_avg = |f: &dyn Fn(&CategoryReport) -> f64| {
        if reports.is_empty() {
            0.0
        } else {
            reports.iter().map(f).sum::<f64>() / reports.len() as f64
        }
    };
    let mean_ap = macro_avg(&|c| c.ap);
    let mean_ap50 = macro_avg(&|c| c.ap50);
    Ok(EvalReport {
        thresholds: thresholds.to_vec(),
        categories: reports,
        mean_ap,
        mean_ap50,
        dropped_empty,
    })
}

/// True-positive flag for each prediction, in score order.
fn greedy_match(ious: &[Vec<Option<f64>>], n_gt: usize, threshold: f64) -> Vec<bool> {
    let mut taken = vec![false; n_gt];
    ious.iter()
        .map(|row| {
            let mut best: Option<(usize, f64)> = None;
            for (g, v) in row.iter().enumerate() {
                let Some(v) = *v else { continue };
                if taken[g] || v < threshold {
                    continue;
                }
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((g, v));
                }
            }
            match best {
                Some((g, _)) => {
                    taken[g] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

/// 101-point interpolated precision for a ranked list of hits.
fn interpolated_ap(hits: &[bool], n_gt: usize) -> f64 {
    let mut recall = Vec::with_capacity(hits.len());
    let mut precision = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (k, &h) in hits.iter().enumerate() {
        tp += h as usize;
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (k + 1) as f64);
    }
    for k in (1..precision.len()).rev() {
        if precision[k] > precision[k - 1] {
            precision[k - 1] = precision[k];
        }
    }
    let mut sum = 0.0;
    let mut idx = 0;
    for i in 0..=100 {
        let r = i as f64 / 100.0;
        while idx < recall.len() && recall[idx] < r {
            idx += 1;
        }
        if idx < recall.len() {
            sum += precision[idx];
        }
    }
    sum / 101.0
}

/// Score fitted disk sets against their ground truths. Fit `i` becomes a
/// prediction on image `i` with score `1 - best loss` (clamped to [0, 1]).
pub fn evaluate_fits(
    fits: &[FitResult],
    categories: &[u32],
    gts: &[BinaryMask],
    alpha: f64,
) -> Result<EvalReport> {
    if fits.len() != categories.len() || fits.len() != gts.len() {
        return Err(Error::contract(format!(
            "misaligned inputs: {} fits, {} categories, {} ground truths",
            fits.len(),
            categories.len(),
            gts.len()
        )));
    }
    let mut preds = Vec::with_capacity(fits.len());
    let mut truths = Vec::with_capacity(fits.len());
    for (image, ((fit, &category), gt)) in fits.iter().zip(categories).zip(gts).enumerate() {
        preds.push(ScoredInstance {
            image,
            category,
            score: (1.0 - fit.best_loss()).clamp(0.0, 1.0),
            mask: fit.mask(gt.width(), gt.height(), alpha)?,
        });
        truths.push(GroundTruth {
            image,
            category,
            mask: gt.clone(),
        });
    }
    average_precision(&preds, &truths, &default_thresholds())
}
