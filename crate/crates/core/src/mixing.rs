//! Mask generation (class-based, rectangular, smoothed-noise), the mixing
//! algebra for images and targets, pseudo-labelling, and the confidence
//! weight for the unsupervised loss term.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::network::{forward, ModelParams, NetworkConfig};
use crate::tensor::{BinaryMask, Image, ProbMap, SegMap, Tensor};

/// Per pixel, the smallest class index attaining the maximum probability.
pub fn pixelwise_argmax(probs: &ProbMap) -> SegMap {
    let (h, w, k) = (probs.shape()[0], probs.shape()[1], probs.shape()[2]);
    let mut seg = SegMap::new(h, w);
    for (px, id) in probs.data().chunks_exact(k).zip(seg.data.iter_mut()) {
        let mut best = 0usize;
        for (c, &p) in px.iter().enumerate() {
            if p > px[best] {
                best = c;
            }
        }
        *id = best as u8;
    }
    seg
}

/// Sorted distinct class ids occurring in the map.
pub fn present_classes(segmap: &SegMap) -> Vec<u8> {
    let mut seen = [false; 256];
    for &id in &segmap.data {
        seen[id as usize] = true;
    }
    (0u16..256).filter(|&id| seen[id as usize]).map(|id| id as u8).collect()
}

/// Uniformly sampled subset of `ceil(|classes| / 2)` classes, returned sorted.
pub fn sample_class_subset<R: Rng>(classes: &[u8], rng: &mut R) -> Result<Vec<u8>> {
    if classes.is_empty() {
        return Err(Error::invalid("sample_class_subset", "empty class set"));
    }
    let take = classes.len().div_ceil(2);
    let mut pool = classes.to_vec();
    for i in (1..pool.len()).rev() {
        let j = rng.gen_range(0..=i);
        pool.swap(i, j);
    }
    let mut subset = pool[..take].to_vec();
    subset.sort_unstable();
    Ok(subset)
}

/// `M(i,j) = 1` iff `segmap(i,j)` is in `subset`. The subset must only name
/// classes present in the map; anything else signals a caller bug.
pub fn classmix_mask(segmap: &SegMap, subset: &[u8]) -> Result<BinaryMask> {
    let present = present_classes(segmap);
    for id in subset {
        if !present.contains(id) {
            return Err(Error::invalid(
                "classmix_mask",
                format!("class {id} not present in segmap"),
            ));
        }
    }
    let mut selected = [false; 256];
    for &id in subset {
        selected[id as usize] = true;
    }
    let mut mask = BinaryMask::zeros(segmap.h, segmap.w);
    for (m, &id) in mask.data.iter_mut().zip(&segmap.data) {
        *m = selected[id as usize] as u8;
    }
    Ok(mask)
}

/// Single axis-aligned rectangle of ones covering half the image area, with
/// aspect ratio log-uniform in [0.5, 2] and position uniform among fits.
pub fn cutmix_mask<R: Rng>(h: usize, w: usize, rng: &mut R) -> Result<BinaryMask> {
    if h < 2 || w < 2 {
        return Err(Error::invalid("cutmix_mask", "mask must be at least 2x2"));
    }
    let area = 0.5 * (h * w) as f64;
    let ln2 = std::f64::consts::LN_2;
    let aspect = rng.gen_range(-ln2..=ln2).exp();
    let rect_h = ((area * aspect).sqrt().round() as usize).clamp(1, h);
    let rect_w = ((area / aspect).sqrt().round() as usize).clamp(1, w);
    let top = rng.gen_range(0..=h - rect_h);
    let left = rng.gen_range(0..=w - rect_w);
    let mut mask = BinaryMask::zeros(h, w);
    for i in top..top + rect_h {
        for j in left..left + rect_w {
            mask.set(i, j, 1);
        }
    }
    Ok(mask)
}

/// Reflect an out-of-range index back into `[0, n)` (mirror without edge
/// repetition), handling multiple bounces for kernels wider than the image.
fn reflect_index(idx: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = (2 * n - 2) as isize;
    let mut m = idx % period;
    if m < 0 {
        m += period;
    }
    let m = m as usize;
    if m >= n {
        2 * n - 2 - m
    } else {
        m
    }
}

/// Normalized 1D tap weights for one blur pass along an axis of length `n`.
///
/// Reflect padding makes the signal periodic with period `2n - 2`, so taps a
/// whole period apart hit the same source pixel. When the 3-sigma truncation
/// radius reaches beyond one period we fold the kernel onto a single period;
/// a plainly truncated kernel that wide would stack misaligned reflections
/// and leave speckly high-frequency residue instead of a smooth field.
/// Returns `(offset weights, leftmost tap offset)`.
fn gaussian_taps(sigma: f64, radius: usize, n: usize) -> (Vec<f64>, isize) {
    let gauss = |t: isize| {
        let d = t as f64;
        (-d * d / (2.0 * sigma * sigma)).exp()
    };
    let period = if n > 1 { 2 * n - 2 } else { 1 };
    let mut weights;
    let start;
    if radius < period {
        start = -(radius as isize);
        weights = (0..=2 * radius as isize).map(|t| gauss(start + t)).collect::<Vec<f64>>();
    } else {
        // fold the full tail, not just 3 sigma: a cut-off tail leaves a step
        // in the periodized kernel whose sidelobes show up as speckle
        let full = (7.5 * sigma).ceil() as isize;
        start = 0;
        weights = vec![0.0; period];
        for t in -full..=full {
            let slot = t.rem_euclid(period as isize) as usize;
            weights[slot] += gauss(t);
        }
    }
    let norm: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= norm;
    }
    (weights, start)
}

/// Separable Gaussian blur truncated at 3 sigma, reflect padding. Operates
/// per channel on an `[H, W, C]` tensor; `sigma = 0` returns a copy.
pub fn gaussian_blur(input: &Tensor, sigma: f64) -> Tensor {
    let radius = (3.0 * sigma).ceil() as usize;
    if radius == 0 {
        return input.clone();
    }
    let (h, w, c) = (input.shape()[0], input.shape()[1], input.shape()[2]);

    // horizontal pass
    let (wx, sx) = gaussian_taps(sigma, radius, w);
    let mut tmp = Tensor::zeros(&[h, w, c]);
    for i in 0..h {
        for j in 0..w {
            let px = tmp.pixel_mut(i, j);
            for (t, &wgt) in wx.iter().enumerate() {
                let x = reflect_index(j as isize + sx + t as isize, w);
                for (o, &v) in px.iter_mut().zip(input.pixel(i, x)) {
                    *o += wgt * v;
                }
            }
        }
    }
    // vertical pass
    let (wy, sy) = gaussian_taps(sigma, radius, h);
    let mut out = Tensor::zeros(&[h, w, c]);
    for i in 0..h {
        for j in 0..w {
            let px = out.pixel_mut(i, j);
            for (t, &wgt) in wy.iter().enumerate() {
                let y = reflect_index(i as isize + sy + t as isize, h);
                for (o, &v) in px.iter_mut().zip(tmp.pixel(y, j)) {
                    *o += wgt * v;
                }
            }
        }
    }
    out
}

/// Smoothed-noise mask: an i.i.d. Gaussian field blurred at scale `sigma` and
/// thresholded at its empirical `p`-quantile, so the ones-fraction equals `p`
/// to within one pixel.
pub fn cowmix_mask<R: Rng>(h: usize, w: usize, sigma: f64, p: f64, rng: &mut R) -> Result<BinaryMask> {
    if sigma <= 0.0 {
        return Err(Error::invalid("cowmix_mask", format!("sigma {sigma} must be positive")));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid("cowmix_mask", format!("p {p} outside (0, 1)")));
    }
    let n = h * w;
    let field = Tensor::from_vec(
        &[h, w, 1],
        (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
    )?;
    let smooth = gaussian_blur(&field, sigma);
    let m = ((p * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| {
        smooth.data()[b]
            .partial_cmp(&smooth.data()[a])
            .expect("smoothed field is finite")
            .then(a.cmp(&b))
    });
    let mut mask = BinaryMask::zeros(h, w);
    for &idx in &order[..m] {
        mask.data[idx] = 1;
    }
    Ok(mask)
}

/// `out(i,j) = A(i,j)` where the mask is 1, else `B(i,j)`; the mask
/// broadcasts over channels, so images and prob-maps mix alike.
pub fn mix(mask: &BinaryMask, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::shape("mix", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    if a.shape().len() != 3 || a.shape()[0] != mask.h || a.shape()[1] != mask.w {
        return Err(Error::shape(
            "mix",
            format!("mask {}x{} vs raster {:?}", mask.h, mask.w, a.shape()),
        ));
    }
    let c = a.shape()[2];
    let mut out = b.clone();
    for (px, (&m, apx)) in out
        .data_mut()
        .chunks_exact_mut(c)
        .zip(mask.data.iter().zip(a.data().chunks_exact(c)))
    {
        if m == 1 {
            px.copy_from_slice(apx);
        }
    }
    Ok(out)
}

/// Replace each pixel's distribution by a one-hot vector at its argmax
/// (lowest index on ties). Every output pixel has entropy exactly zero.
pub fn pseudo_label(probs: &ProbMap) -> ProbMap {
    let k = probs.shape()[2];
    let mut out = Tensor::zeros(probs.shape());
    for (opx, px) in out.data_mut().chunks_exact_mut(k).zip(probs.data().chunks_exact(k)) {
        let mut best = 0usize;
        for (c, &p) in px.iter().enumerate() {
            if p > px[best] {
                best = c;
            }
        }
        opx[best] = 1.0;
    }
    out
}

/// Fraction of pixels whose maximum class probability exceeds `tau`.
/// Computed on the mixed soft prediction, before pseudo-labelling; after
/// argmaxing every pixel would trivially pass the threshold.
pub fn lambda_weight(mixed_soft_target: &ProbMap, tau: f64) -> f64 {
    let k = mixed_soft_target.shape()[2];
    let n = mixed_soft_target.len() / k;
    if n == 0 {
        return 0.0;
    }
    let confident = mixed_soft_target
        .data()
        .chunks_exact(k)
        .filter(|px| px.iter().cloned().fold(f64::NEG_INFINITY, f64::max) > tau)
        .count();
    confident as f64 / n as f64
}

/// Everything one mixed sample contributes to training.
#[derive(Debug, Clone)]
pub struct MixOutput {
    pub mixed_image: Image,
    /// Mask-mix of the teacher's soft predictions.
    pub soft_target: ProbMap,
    /// One-hot version of the soft target.
    pub pseudo_target: ProbMap,
    /// Confidence weight from the soft target, in [0, 1].
    pub lambda: f64,
    pub mask: BinaryMask,
}

/// The full class-based augmentation: teacher predictions on both images, a
/// mask from half the classes in A's argmaxed prediction, then mask-mixes of
/// the images and of the predictions, pseudo-labelling and the confidence
/// weight.
pub fn classmix_augment<R: Rng>(
    a: &Image,
    b: &Image,
    teacher: &ModelParams,
    net: &NetworkConfig,
    tau: f64,
    rng: &mut R,
) -> Result<MixOutput> {
    if a.shape() != b.shape() {
        return Err(Error::shape("classmix_augment", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let (_, probs_a) = forward(teacher, net, a)?;
    let (_, probs_b) = forward(teacher, net, b)?;
    let pred_a = pixelwise_argmax(&probs_a);
    let classes = present_classes(&pred_a);
    let subset = sample_class_subset(&classes, rng)?;
    let mask = classmix_mask(&pred_a, &subset)?;
    let mixed_image = mix(&mask, a, b)?;
    let soft_target = mix(&mask, &probs_a, &probs_b)?;
    let pseudo_target = pseudo_label(&soft_target);
    let lambda = lambda_weight(&soft_target, tau);
    Ok(MixOutput {
        mixed_image,
        soft_target,
        pseudo_target,
        lambda,
        mask,
    })
}

/// Sampled photometric perturbation. Neutral components are skipped during
/// application, so `strength = 0` reproduces the input exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct JitterParams {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    /// Fraction of each channel replaced by the next channel (hue-like mix).
    pub hue_mix: f64,
    /// Blur scale; 0 disables the blur.
    pub blur_sigma: f64,
}

pub fn sample_jitter<R: Rng>(rng: &mut R, strength: f64) -> JitterParams {
    let s = strength.clamp(0.0, 1.0);
    let lo = 1.0 - 0.3 * s;
    let hi = 1.0 + 0.3 * s;
    let brightness = rng.gen_range(lo..=hi);
    let contrast = rng.gen_range(lo..=hi);
    let saturation = rng.gen_range(lo..=hi);
    let hue_mix = rng.gen_range(0.0..=0.3 * s);
    let blur = rng.gen_bool(0.5);
    let blur_sigma = if blur { rng.gen_range(0.0..=1.5 * s) } else { 0.0 };
    JitterParams {
        brightness,
        contrast,
        saturation,
        hue_mix,
        blur_sigma,
    }
}

pub fn apply_jitter(image: &Image, params: &JitterParams) -> Image {
    let mut out = image.clone();
    let c = image.shape()[2];
    if params.brightness != 1.0 {
        for v in out.data_mut() {
            *v *= params.brightness;
        }
    }
    if params.contrast != 1.0 {
        let mean: f64 = out.data().iter().sum::<f64>() / out.len() as f64;
        for v in out.data_mut() {
            *v = mean + params.contrast * (*v - mean);
        }
    }
    if params.saturation != 1.0 {
        for px in out.data_mut().chunks_exact_mut(c) {
            let gray: f64 = px.iter().sum::<f64>() / c as f64;
            for v in px.iter_mut() {
                *v = gray + params.saturation * (*v - gray);
            }
        }
    }
    if params.hue_mix != 0.0 && c > 1 {
        for px in out.data_mut().chunks_exact_mut(c) {
            let orig: Vec<f64> = px.to_vec();
            for (ch, v) in px.iter_mut().enumerate() {
                *v = (1.0 - params.hue_mix) * orig[ch] + params.hue_mix * orig[(ch + 1) % c];
            }
        }
    }
    if params.blur_sigma > 0.0 {
        out = gaussian_blur(&out, params.blur_sigma);
    }
    for v in out.data_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    out
}

/// Random brightness/contrast/saturation/hue perturbation plus an optional
/// Gaussian blur, output clipped to [0, 1]. Labels are untouched by design.
pub fn apply_color_jitter_blur<R: Rng>(image: &Image, rng: &mut R, strength: f64) -> Image {
    let params = sample_jitter(rng, strength);
    apply_jitter(image, &params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn probmap(h: usize, w: usize, k: usize, vals: &[f64]) -> ProbMap {
        Tensor::from_vec(&[h, w, k], vals.to_vec()).unwrap()
    }

    #[test]
    fn argmax_one_hot_and_ties() {
        let p = probmap(1, 3, 4, &[
            0.0, 1.0, 0.0, 0.0, // one-hot -> 1
            0.1, 0.4, 0.1, 0.4, // tie between 1 and 3 -> 1
            0.2, 0.5, 0.3, 0.0, // -> 1
        ]);
        let seg = pixelwise_argmax(&p);
        assert_eq!(seg.data, vec![1, 1, 1]);

        let p2 = probmap(1, 1, 3, &[0.2, 0.5, 0.3]);
        assert_eq!(pixelwise_argmax(&p2).data, vec![1]);
    }

    #[test]
    fn present_classes_sorted_distinct() {
        let mut seg = SegMap::new(1, 3);
        seg.data = vec![2, 2, 2];
        assert_eq!(present_classes(&seg), vec![2]);

        let mut seg = SegMap::new(1, 3);
        seg.data = vec![0, 4, 1];
        assert_eq!(present_classes(&seg), vec![0, 1, 4]);

        let mut seg = SegMap::new(3, 3);
        seg.data = vec![0, 0, 1, 1, 2, 2, 5, 5, 5];
        assert_eq!(present_classes(&seg), vec![0, 1, 2, 5]);
    }

    #[test]
    fn subset_size_is_half_rounded_up() {
        let mut r = rng(0);
        assert_eq!(sample_class_subset(&[0, 1, 2, 3], &mut r).unwrap().len(), 2);
        assert_eq!(sample_class_subset(&[0, 1, 2], &mut r).unwrap().len(), 2);
        assert_eq!(sample_class_subset(&[7], &mut r).unwrap(), vec![7]);
        assert!(sample_class_subset(&[], &mut r).is_err());
    }

    #[test]
    fn subset_sampling_uniform_over_pairs() {
        let mut r = rng(1);
        let mut counts = std::collections::HashMap::new();
        let draws = 4000;
        for _ in 0..draws {
            let s = sample_class_subset(&[0, 1, 2, 3], &mut r).unwrap();
            *counts.entry(s).or_insert(0u32) += 1;
        }
        assert_eq!(counts.len(), 6);
        let p = 1.0 / 6.0;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for (subset, count) in counts {
            assert!(
                (count as f64 - draws as f64 * p).abs() <= 3.0 * sigma,
                "subset {subset:?}: count {count}"
            );
        }
    }

    #[test]
    fn classmix_mask_cases() {
        let mut seg = SegMap::new(2, 2);
        seg.data = vec![0, 1, 2, 1];
        let all = classmix_mask(&seg, &[0, 1, 2]).unwrap();
        assert_eq!(all.data, vec![1, 1, 1, 1]);

        let none = classmix_mask(&seg, &[]).unwrap();
        assert_eq!(none.data, vec![0, 0, 0, 0]);

        let m = classmix_mask(&seg, &[1]).unwrap();
        assert_eq!(m.data, vec![0, 1, 0, 1]);

        assert!(classmix_mask(&seg, &[5]).is_err());
    }

    #[test]
    fn cutmix_area_and_rectangularity() {
        let mut r = rng(2);
        for _ in 0..100 {
            let m = cutmix_mask(64, 64, &mut r).unwrap();
            let ones = m.ones_count();
            assert!((ones as f64) >= 0.4 * 4096.0 && (ones as f64) <= 0.6 * 4096.0, "area {ones}");
            assert_rectangle(&m);
        }
    }

    fn assert_rectangle(m: &BinaryMask) {
        let mut ranges = Vec::new();
        for i in 0..m.h {
            let row: Vec<usize> = (0..m.w).filter(|&j| m.at(i, j) == 1).collect();
            if row.is_empty() {
                ranges.push(None);
            } else {
                let (lo, hi) = (row[0], *row.last().unwrap());
                assert_eq!(row.len(), hi - lo + 1, "row {i} of mask is not one run");
                ranges.push(Some((lo, hi)));
            }
        }
        let filled: Vec<&(usize, usize)> = ranges.iter().flatten().collect();
        assert!(!filled.is_empty());
        assert!(filled.windows(2).all(|p| p[0] == p[1]), "rows disagree on the column range");
        // nonempty rows must be contiguous
        let first = ranges.iter().position(|r| r.is_some()).unwrap();
        let last = ranges.iter().rposition(|r| r.is_some()).unwrap();
        assert!(ranges[first..=last].iter().all(|r| r.is_some()));
    }

    #[test]
    fn cutmix_small_grid_exhaustive_scan() {
        let mut r = rng(3);
        for _ in 0..2000 {
            let m = cutmix_mask(8, 8, &mut r).unwrap();
            let ones = m.ones_count();
            assert!((28..=36).contains(&ones), "area {ones} outside 28..=36");
            assert_rectangle(&m);
        }
    }

    #[test]
    fn cowmix_fraction_exact_within_one_pixel() {
        let mut r = rng(4);
        let m = cowmix_mask(64, 64, 16.0, 0.5, &mut r).unwrap();
        let frac = m.ones_count() as f64 / 4096.0;
        assert!((frac - 0.5).abs() <= 1.0 / 4096.0, "fraction {frac}");
        assert!(m.is_binary());
    }

    #[test]
    fn cowmix_deterministic_per_seed() {
        let a = cowmix_mask(32, 32, 8.0, 0.4, &mut rng(5)).unwrap();
        let b = cowmix_mask(32, 32, 8.0, 0.4, &mut rng(5)).unwrap();
        assert_eq!(a, b);
    }

    /// 4-connected regions of constant value.
    fn count_regions(m: &BinaryMask) -> usize {
        let mut seen = vec![false; m.h * m.w];
        let mut regions = 0;
        let mut stack = Vec::new();
        for start in 0..m.h * m.w {
            if seen[start] {
                continue;
            }
            regions += 1;
            stack.push(start);
            seen[start] = true;
            while let Some(p) = stack.pop() {
                let (i, j) = (p / m.w, p % m.w);
                let mut push = |q: usize| {
                    if !seen[q] && m.data[q] == m.data[p] {
                        seen[q] = true;
                        stack.push(q);
                    }
                };
                if i > 0 {
                    push(p - m.w);
                }
                if i + 1 < m.h {
                    push(p + m.w);
                }
                if j > 0 {
                    push(p - 1);
                }
                if j + 1 < m.w {
                    push(p + 1);
                }
            }
        }
        regions
    }

    #[test]
    fn cowmix_large_sigma_gives_coarse_blobs() {
        let mut r = rng(6);
        for _ in 0..100 {
            let m = cowmix_mask(64, 64, 64.0, 0.5, &mut r).unwrap();
            let regions = count_regions(&m);
            assert!(regions <= 3, "expected at most 3 regions, got {regions}");
        }
    }

    #[test]
    fn mix_identities_and_elementwise_case() {
        let a = Tensor::from_vec(&[2, 1, 1], vec![0.2, 0.2]).unwrap();
        let b = Tensor::from_vec(&[2, 1, 1], vec![0.8, 0.8]).unwrap();
        let ones = BinaryMask {
            h: 2,
            w: 1,
            data: vec![1, 1],
        };
        let zeros = BinaryMask {
            h: 2,
            w: 1,
            data: vec![0, 0],
        };
        assert_eq!(mix(&ones, &a, &b).unwrap(), a);
        assert_eq!(mix(&zeros, &a, &b).unwrap(), b);
        let m = BinaryMask {
            h: 2,
            w: 1,
            data: vec![1, 0],
        };
        assert_eq!(mix(&m, &a, &b).unwrap().data(), &[0.2, 0.8]);
    }

    #[test]
    fn mix_rejects_dim_mismatch() {
        let a = Tensor::zeros(&[2, 2, 1]);
        let b = Tensor::zeros(&[2, 3, 1]);
        let m = BinaryMask::zeros(2, 2);
        assert!(mix(&m, &a, &b).is_err());
    }

    #[test]
    fn pseudo_label_idempotent_and_argmax() {
        let p = probmap(1, 1, 3, &[0.4, 0.35, 0.25]);
        let one = pseudo_label(&p);
        assert_eq!(one.data(), &[1.0, 0.0, 0.0]);
        assert_eq!(pseudo_label(&one), one);

        let p2 = probmap(1, 2, 3, &[0.1, 0.8, 0.1, 0.3, 0.3, 0.4]);
        for px in pseudo_label(&p2).data().chunks_exact(3) {
            assert_eq!(px.iter().filter(|&&v| v != 0.0).count(), 1);
            assert_eq!(px.iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn lambda_weight_cases() {
        let onehot = probmap(2, 1, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(lambda_weight(&onehot, 0.968), 1.0);

        let uniform = Tensor::full(&[2, 2, 6], 1.0 / 6.0);
        assert_eq!(lambda_weight(&uniform, 0.968), 0.0);

        // max-probs 0.99, 0.97, 0.5, 0.2 with tau = 0.968 -> 2 of 4
        let p = probmap(2, 2, 2, &[0.99, 0.01, 0.97, 0.03, 0.5, 0.5, 0.2, 0.8]);
        assert_eq!(lambda_weight(&p, 0.968), 0.5);
    }

    #[test]
    fn jitter_strength_zero_is_identity() {
        let img = Tensor::from_vec(&[2, 2, 3], (0..12).map(|v| v as f64 / 12.0).collect()).unwrap();
        let out = apply_color_jitter_blur(&img, &mut rng(7), 0.0);
        assert_eq!(out, img);
    }

    #[test]
    fn jitter_output_stays_in_unit_interval() {
        let img = Tensor::from_vec(&[4, 4, 3], (0..48).map(|v| (v % 13) as f64 / 12.0).collect()).unwrap();
        let mut r = rng(8);
        for _ in 0..50 {
            let out = apply_color_jitter_blur(&img, &mut r, 1.0);
            assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn jitter_brightness_only_replays_exactly() {
        let img = Tensor::from_vec(&[3, 3, 3], (0..27).map(|v| (v as f64) / 30.0).collect()).unwrap();
        let params = JitterParams {
            brightness: 1.27,
            contrast: 1.0,
            saturation: 1.0,
            hue_mix: 0.0,
            blur_sigma: 0.0,
        };
        let out = apply_jitter(&img, &params);
        for (o, &v) in out.data().iter().zip(img.data()) {
            assert_eq!(*o, (1.27 * v).clamp(0.0, 1.0));
        }
    }

    #[test]
    fn blur_preserves_constant_field() {
        let img = Tensor::full(&[8, 8, 1], 0.37);
        let out = gaussian_blur(&img, 2.0);
        for &v in out.data() {
            assert!((v - 0.37).abs() < 1e-12);
        }
    }
}
