//! Evaluation (confusion matrix, mIoU) and the dataset/mask analyses:
//! spatial class distributions, mask diversity, border contamination.

use crate::error::{Error, Result};
use crate::tensor::{BinaryMask, ProbMap, SegMap};

/// `K x K` counts, rows = ground truth, columns = prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> ConfusionMatrix {
        ConfusionMatrix {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn count(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Merge another matrix into this one (accumulation is associative).
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.k != other.k {
            return Err(Error::shape("ConfusionMatrix::merge", "class counts differ"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

/// Add one prediction/ground-truth pair to the matrix, per pixel.
pub fn accumulate_confusion(pred: &SegMap, gt: &SegMap, matrix: &mut ConfusionMatrix) -> Result<()> {
    if pred.h != gt.h || pred.w != gt.w {
        return Err(Error::shape("accumulate_confusion", "prediction and ground truth sizes differ"));
    }
    let k = matrix.k;
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        if (p as usize) >= k || (g as usize) >= k {
            return Err(Error::invalid(
                "accumulate_confusion",
                format!("class id out of range: pred {p}, gt {g}, K = {k}"),
            ));
        }
        matrix.counts[g as usize * k + p as usize] += 1;
    }
    Ok(())
}

/// Mean over classes of `TP / (TP + FP + FN)`; classes absent from both
/// ground truth and prediction are excluded from the mean.
pub fn miou(matrix: &ConfusionMatrix) -> Result<f64> {
    let k = matrix.k;
    let mut sum = 0.0;
    let mut classes = 0usize;
    for c in 0..k {
        let tp = matrix.counts[c * k + c];
        let fp: u64 = (0..k).filter(|&g| g != c).map(|g| matrix.counts[g * k + c]).sum();
        let fn_: u64 = (0..k).filter(|&p| p != c).map(|p| matrix.counts[c * k + p]).sum();
        let union = tp + fp + fn_;
        if union == 0 {
            continue;
        }
        sum += tp as f64 / union as f64;
        classes += 1;
    }
    if classes == 0 {
        return Err(Error::invalid("miou", "all classes absent from both maps"));
    }
    Ok(sum / classes as f64)
}

/// Per-pixel frequency of one class across a set of maps.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialHeatmap {
    pub h: usize,
    pub w: usize,
    /// Fraction of maps having the class at each pixel, in [0, 1].
    pub data: Vec<f64>,
}

impl SpatialHeatmap {
    /// Fraction of total heatmap mass inside rows `[row0, row1)`.
    pub fn band_mass_fraction(&self, row0: usize, row1: usize) -> f64 {
        let total: f64 = self.data.iter().sum();
        if total == 0.0 {
            return 0.0;
        }
        let band: f64 = self.data[row0 * self.w..row1 * self.w].iter().sum();
        band / total
    }
}

/// `cell(i,j) = (#maps with class_id at (i,j)) / (#maps)`.
pub fn spatial_class_distribution(maps: &[SegMap], class_id: u8) -> Result<SpatialHeatmap> {
    let first = maps.first().ok_or_else(|| Error::invalid("spatial_class_distribution", "empty dataset"))?;
    let (h, w) = (first.h, first.w);
    let mut counts = vec![0u32; h * w];
    for m in maps {
        if m.h != h || m.w != w {
            return Err(Error::shape("spatial_class_distribution", "maps must share dimensions"));
        }
        for (c, &id) in counts.iter_mut().zip(&m.data) {
            if id == class_id {
                *c += 1;
            }
        }
    }
    let n = maps.len() as f64;
    Ok(SpatialHeatmap {
        h,
        w,
        data: counts.into_iter().map(|c| c as f64 / n).collect(),
    })
}

/// Shannon entropy in nats of one pixel's class distribution.
fn pixel_entropy(px: &[f64]) -> f64 {
    px.iter().map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 }).sum()
}

/// Mean entropies split by distance to the mask border.
#[derive(Debug, Clone, PartialEq)]
pub struct BorderEntropy {
    /// Mean over pixels within Chebyshev distance `radius` of a mask
    /// transition; absent when the mask is constant.
    pub border: Option<f64>,
    /// Mean over the remaining pixels; absent when everything is border.
    pub interior: Option<f64>,
}

/// Split pixels into border (within Chebyshev distance `radius` of a pixel
/// with the opposite mask value) and interior, and return the mean Shannon
/// entropy (nats) of the soft target over each set.
pub fn border_entropy_profile(soft_target: &ProbMap, mask: &BinaryMask, radius: usize) -> Result<BorderEntropy> {
    let (h, w, k) = (
        soft_target.shape()[0],
        soft_target.shape()[1],
        soft_target.shape()[2],
    );
    if mask.h != h || mask.w != w {
        return Err(Error::shape("border_entropy_profile", "mask and target sizes differ"));
    }
    if radius == 0 {
        return Err(Error::invalid("border_entropy_profile", "radius must be at least 1"));
    }
    let mut border_sum = 0.0;
    let mut border_n = 0usize;
    let mut interior_sum = 0.0;
    let mut interior_n = 0usize;
    for i in 0..h {
        for j in 0..w {
            let own = mask.at(i, j);
            let i0 = i.saturating_sub(radius);
            let i1 = (i + radius).min(h - 1);
            let j0 = j.saturating_sub(radius);
            let j1 = (j + radius).min(w - 1);
            let mut is_border = false;
            'scan: for y in i0..=i1 {
                for x in j0..=j1 {
                    if mask.at(y, x) != own {
                        is_border = true;
                        break 'scan;
                    }
                }
            }
            let e = pixel_entropy(&soft_target.data()[(i * w + j) * k..(i * w + j + 1) * k]);
            if is_border {
                border_sum += e;
                border_n += 1;
            } else {
                interior_sum += e;
                interior_n += 1;
            }
        }
    }
    Ok(BorderEntropy {
        border: (border_n > 0).then(|| border_sum / border_n as f64),
        interior: (interior_n > 0).then(|| interior_sum / interior_n as f64),
    })
}

/// `1 - mean pairwise Jaccard similarity`; higher means more diverse masks.
/// A pair of empty masks counts as similarity 1.
pub fn mask_diversity(masks: &[BinaryMask]) -> Result<f64> {
    if masks.len() < 2 {
        return Err(Error::invalid("mask_diversity", "need at least 2 masks"));
    }
    let (h, w) = (masks[0].h, masks[0].w);
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for (idx, a) in masks.iter().enumerate() {
        if a.h != h || a.w != w {
            return Err(Error::shape("mask_diversity", "masks must share dimensions"));
        }
        for b in &masks[idx + 1..] {
            let mut inter = 0usize;
            let mut union = 0usize;
            for (&x, &y) in a.data.iter().zip(&b.data) {
                inter += (x == 1 && y == 1) as usize;
                union += (x == 1 || y == 1) as usize;
            }
            sum += if union == 0 { 1.0 } else { inter as f64 / union as f64 };
            pairs += 1;
        }
    }
    Ok(1.0 - sum / pairs as f64)
}
