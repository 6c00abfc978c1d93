//! Depth-space evaluation metrics and the ground-truth-free photometric
//! reprojection metric.

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::geometry::StereoRig;
use crate::grid::{bilinear_taps, DepthMap, Grid};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthEvalResult {
    /// Mean |pred − gt| / gt.
    pub abs_rel: f64,
    /// Fraction of pixels with max(pred/gt, gt/pred) > 1.25.
    pub exceed_1: f64,
    /// Same with threshold 1.25².
    pub exceed_2: f64,
    /// Same with threshold 1.25³.
    pub exceed_3: f64,
    pub evaluated_pixels: usize,
}

/// Compares depths over pixels valid in both maps. The exceedance ratio is
/// symmetric, so swapping the arguments changes abs_rel but not exceed_k.
pub fn eval_depth(pred: &DepthMap, gt: &DepthMap) -> Result<DepthEvalResult> {
    if (pred.width(), pred.height()) != (gt.width(), gt.height()) {
        return Err(Error::DimensionMismatch(format!(
            "pred {}x{} vs gt {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    let mut n = 0usize;
    let mut abs_rel = 0.0;
    let mut counts = [0usize; 3];
    for y in 0..gt.height() {
        for x in 0..gt.width() {
            let (p, g) = match (pred.get(x, y), gt.get(x, y)) {
                (Some(p), Some(g)) => (p, g),
                _ => continue,
            };
            n += 1;
            abs_rel += (p - g).abs() / g;
            let ratio = (p / g).max(g / p);
            for (k, c) in counts.iter_mut().enumerate() {
                if ratio > 1.25f64.powi(k as i32 + 1) {
                    *c += 1;
                }
            }
        }
    }
    if n == 0 {
        return Err(Error::NoValidPixels(
            "no pixels valid in both depth maps".into(),
        ));
    }
    let frac = |c: usize| c as f64 / n as f64;
    Ok(DepthEvalResult {
        abs_rel: abs_rel / n as f64,
        exceed_1: frac(counts[0]),
        exceed_2: frac(counts[1]),
        exceed_3: frac(counts[2]),
        evaluated_pixels: n,
    })
}

/// Least-squares scalar fit of pred onto gt: s = Σ pred·gt / Σ pred² over
/// pixels valid in both maps. Returns the rescaled map and the factor.
pub fn align_scale(pred: &DepthMap, gt: &DepthMap) -> Result<(DepthMap, f64)> {
    if (pred.width(), pred.height()) != (gt.width(), gt.height()) {
        return Err(Error::DimensionMismatch(format!(
            "pred {}x{} vs gt {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for y in 0..gt.height() {
        for x in 0..gt.width() {
            if let (Some(p), Some(g)) = (pred.get(x, y), gt.get(x, y)) {
                num += p * g;
                den += p * p;
            }
        }
    }
    if den == 0.0 {
        return Err(Error::NoValidPixels(
            "no overlapping valid pixels to fit a scale".into(),
        ));
    }
    let s = num / den;
    Ok((pred.scaled(s), s))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotoEvalResult {
    /// Mean absolute intensity difference.
    pub l1: f64,
    /// Mean squared intensity difference.
    pub l2: f64,
    pub covered_pixels: usize,
    /// Valid-depth pixels whose reprojection left the right image.
    pub excluded_pixels: usize,
}

/// Reprojects each valid-depth left pixel into the right view and compares
/// the bilinearly sampled right intensity against the left pixel's own.
/// Needs no ground truth; exact depth drives the difference to the
/// interpolation floor.
pub fn photometric_metric(
    left: &Grid<f64>,
    right: &Grid<f64>,
    depth_left: &DepthMap,
    rig: &StereoRig,
) -> Result<PhotoEvalResult> {
    let (w, h) = (left.width(), left.height());
    if (right.width(), right.height()) != (w, h)
        || (depth_left.width(), depth_left.height()) != (w, h)
    {
        return Err(Error::DimensionMismatch(format!(
            "left {}x{}, right {}x{}, depth {}x{}",
            w,
            h,
            right.width(),
            right.height(),
            depth_left.width(),
            depth_left.height()
        )));
    }
    let k = &rig.intrinsics;
    let l2r = rig.left_to_right();
    let mut l1 = 0.0;
    let mut l2 = 0.0;
    let mut covered = 0usize;
    let mut excluded = 0usize;
    for y in 0..h {
        for x in 0..w {
            let d = match depth_left.get(x, y) {
                Some(d) => d,
                None => continue,
            };
            let cam = l2r.apply(&(k.ray(x as f64, y as f64) * d));
            if cam.z <= 0.0 {
                excluded += 1;
                continue;
            }
            let p = Vector2::new(k.fx * cam.x / cam.z + k.cx, k.fy * cam.y / cam.z + k.cy);
            let taps = match bilinear_taps(p.x, p.y, w, h) {
                Some(taps) => taps,
                None => {
                    excluded += 1;
                    continue;
                }
            };
            let sampled: f64 = taps.iter().map(|&(tx, ty, w)| w * right.at(tx, ty)).sum();
            let diff = sampled - left.at(x, y);
            l1 += diff.abs();
            l2 += diff * diff;
            covered += 1;
        }
    }
    if covered == 0 {
        return Err(Error::NoValidPixels(
            "no left pixel reprojects into the right image".into(),
        ));
    }
    Ok(PhotoEvalResult {
        l1: l1 / covered as f64,
        l2: l2 / covered as f64,
        covered_pixels: covered,
        excluded_pixels: excluded,
    })
}

/// Unweighted mean of per-frame depth metrics; pixel counts are summed.
pub fn eval_sequence(per_frame: &[DepthEvalResult]) -> Result<DepthEvalResult> {
    if per_frame.is_empty() {
        return Err(Error::InvalidConfig("no frames to aggregate".into()));
    }
    let n = per_frame.len() as f64;
    Ok(DepthEvalResult {
        abs_rel: per_frame.iter().map(|r| r.abs_rel).sum::<f64>() / n,
        exceed_1: per_frame.iter().map(|r| r.exceed_1).sum::<f64>() / n,
        exceed_2: per_frame.iter().map(|r| r.exceed_2).sum::<f64>() / n,
        exceed_3: per_frame.iter().map(|r| r.exceed_3).sum::<f64>() / n,
        evaluated_pixels: per_frame.iter().map(|r| r.evaluated_pixels).sum(),
    })
}

/// Unweighted mean of per-frame photometric metrics.
pub fn eval_sequence_photo(per_frame: &[PhotoEvalResult]) -> Result<PhotoEvalResult> {
    if per_frame.is_empty() {
        return Err(Error::InvalidConfig("no frames to aggregate".into()));
    }
    let n = per_frame.len() as f64;
    Ok(PhotoEvalResult {
        l1: per_frame.iter().map(|r| r.l1).sum::<f64>() / n,
        l2: per_frame.iter().map(|r| r.l2).sum::<f64>() / n,
        covered_pixels: per_frame.iter().map(|r| r.covered_pixels).sum(),
        excluded_pixels: per_frame.iter().map(|r| r.excluded_pixels).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::View;
    use crate::synth::{generate, render_depth, SceneSpec};

    fn map(values: &[f64], w: usize, h: usize) -> DepthMap {
        DepthMap::from_values(Grid::from_vec(w, h, values.to_vec()))
    }

    #[test]
    fn perfect_prediction_scores_zero() {
        let gt = map(&[1.0, 2.0, 3.0, 4.0], 2, 2);
        let r = eval_depth(&gt, &gt).unwrap();
        assert_eq!(r.abs_rel, 0.0);
        assert_eq!((r.exceed_1, r.exceed_2, r.exceed_3), (0.0, 0.0, 0.0));
        assert_eq!(r.evaluated_pixels, 4);
    }

    #[test]
    fn single_pixel_examples() {
        // Ratio 1.1 stays under every threshold.
        let r = eval_depth(&map(&[11.0], 1, 1), &map(&[10.0], 1, 1)).unwrap();
        assert!((r.abs_rel - 0.1).abs() < 1e-12);
        assert_eq!((r.exceed_1, r.exceed_2, r.exceed_3), (0.0, 0.0, 0.0));
        // Ratio 1.3 crosses 1.25 but not 1.5625.
        let r = eval_depth(&map(&[13.0], 1, 1), &map(&[10.0], 1, 1)).unwrap();
        assert_eq!((r.exceed_1, r.exceed_2, r.exceed_3), (1.0, 0.0, 0.0));
        // Ratio 1.8 crosses 1.5625 but not 1.953125.
        let r = eval_depth(&map(&[18.0], 1, 1), &map(&[10.0], 1, 1)).unwrap();
        assert_eq!((r.exceed_1, r.exceed_2, r.exceed_3), (1.0, 1.0, 0.0));
    }

    #[test]
    fn exceedance_is_symmetric_under_swap() {
        let a = map(&[13.0, 7.0, 10.0, 30.0], 2, 2);
        let b = map(&[10.0, 10.0, 10.0, 10.0], 2, 2);
        let ab = eval_depth(&a, &b).unwrap();
        let ba = eval_depth(&b, &a).unwrap();
        assert_eq!(ab.exceed_1, ba.exceed_1);
        assert_eq!(ab.exceed_2, ba.exceed_2);
        assert_eq!(ab.exceed_3, ba.exceed_3);
    }

    #[test]
    fn invalid_pixels_never_contribute() {
        let gt = DepthMap::from_values(Grid::from_vec(2, 2, vec![1.0, 0.0, 3.0, 4.0]));
        let pred_a = map(&[1.1, 5.0, 3.3, 4.4], 2, 2);
        let pred_b = map(&[1.1, 500.0, 3.3, 4.4], 2, 2);
        let ra = eval_depth(&pred_a, &gt).unwrap();
        let rb = eval_depth(&pred_b, &gt).unwrap();
        assert_eq!(ra.abs_rel.to_bits(), rb.abs_rel.to_bits());
        assert_eq!(ra.evaluated_pixels, 3);
    }

    #[test]
    fn no_overlap_is_an_error() {
        let gt = DepthMap::from_values(Grid::from_vec(1, 2, vec![0.0, 1.0]));
        let pred = DepthMap::from_values(Grid::from_vec(1, 2, vec![1.0, 0.0]));
        assert!(eval_depth(&pred, &gt).is_err());
        assert!(align_scale(&pred, &gt).is_err());
    }

    #[test]
    fn align_scale_examples() {
        let gt = map(&[2.0, 4.0, 6.0, 8.0], 2, 2);
        let half = gt.scaled(0.5);
        let (aligned, s) = align_scale(&half, &gt).unwrap();
        assert_eq!(s, 2.0);
        assert_eq!(aligned.values().data(), gt.values().data());
        let (_, s1) = align_scale(&gt, &gt).unwrap();
        assert_eq!(s1, 1.0);
    }

    #[test]
    fn align_scale_satisfies_normal_equation() {
        let spec = SceneSpec::preset("sphere", 1).unwrap();
        let gt = render_depth(&spec, 0, View::Left);
        let pred = render_depth(&spec, 1, View::Left).scaled(0.37);
        let (_, s) = align_scale(&pred, &gt).unwrap();
        let mut resid = 0.0;
        for y in 0..gt.height() {
            for x in 0..gt.width() {
                if let (Some(p), Some(g)) = (pred.get(x, y), gt.get(x, y)) {
                    resid += p * (s * p - g);
                }
            }
        }
        assert!(resid.abs() < 1e-9, "normal equation residual {resid}");
    }

    /// Golden-section search over the scale is an independent oracle for
    /// the closed-form least-squares factor.
    #[test]
    fn align_scale_matches_golden_section_search() {
        let spec = SceneSpec::preset("slanted", 8).unwrap();
        let gt = render_depth(&spec, 0, View::Left);
        let pred = perturbed(&gt);
        let (_, s) = align_scale(&pred, &gt).unwrap();

        let objective = |s: f64| -> f64 {
            let mut e = 0.0;
            for y in 0..gt.height() {
                for x in 0..gt.width() {
                    if let (Some(p), Some(g)) = (pred.get(x, y), gt.get(x, y)) {
                        e += (s * p - g) * (s * p - g);
                    }
                }
            }
            e
        };
        let phi = (5.0f64.sqrt() - 1.0) / 2.0;
        let (mut lo, mut hi) = (1e-3, 1e3);
        let (mut c, mut d) = (hi - phi * (hi - lo), lo + phi * (hi - lo));
        let (mut fc, mut fd) = (objective(c), objective(d));
        while hi - lo > 1e-10 {
            if fc < fd {
                hi = d;
                d = c;
                fd = fc;
                c = hi - phi * (hi - lo);
                fc = objective(c);
            } else {
                lo = c;
                c = d;
                fc = fd;
                d = lo + phi * (hi - lo);
                fd = objective(d);
            }
        }
        let oracle = 0.5 * (lo + hi);
        assert!(
            (s - oracle).abs() < 1e-6,
            "closed form {s} vs golden section {oracle}"
        );
    }

    fn perturbed(gt: &DepthMap) -> DepthMap {
        let mut values = Grid::zeros(gt.width(), gt.height());
        for y in 0..gt.height() {
            for x in 0..gt.width() {
                let d = gt.get(x, y).unwrap();
                // Deterministic multiplicative wobble around 1/3 scale.
                let wob = 1.0 + 0.05 * ((x * 31 + y * 17) % 13) as f64 / 13.0;
                values.set(x, y, d * wob / 3.0);
            }
        }
        DepthMap::from_values(values)
    }

    #[test]
    fn identical_constant_images_score_zero() {
        let img = Grid::new(8, 6, 0.5);
        let spec = SceneSpec::preset("flat", 0).unwrap();
        let depth = DepthMap::from_values(Grid::new(8, 6, 8.0));
        let r = photometric_metric(&img, &img, &depth, &spec.rig).unwrap();
        assert_eq!(r.l1, 0.0);
        assert_eq!(r.l2, 0.0);
    }

    #[test]
    fn exact_depth_hits_interpolation_floor() {
        for name in ["flat", "slanted"] {
            let sb = generate(&SceneSpec::preset(name, 0).unwrap()).unwrap();
            let left = &sb.bundle.left_images.as_ref().unwrap()[0];
            let right = &sb.bundle.right_images.as_ref().unwrap()[0];
            let r = photometric_metric(left, right, &sb.gt_left[0], &sb.bundle.rig).unwrap();
            assert!(r.l1 < 1e-3, "{name}: l1 = {}", r.l1);
            if name == "flat" {
                // Dyadic scene: the reprojection lands on grid points in
                // the same world position, so the difference is exactly 0.
                assert_eq!(r.l1, 0.0);
            }
        }
    }

    #[test]
    fn wrong_depth_scale_raises_photometric_error() {
        let sb = generate(&SceneSpec::preset("slanted", 0).unwrap()).unwrap();
        let left = &sb.bundle.left_images.as_ref().unwrap()[0];
        let right = &sb.bundle.right_images.as_ref().unwrap()[0];
        let exact = photometric_metric(left, right, &sb.gt_left[0], &sb.bundle.rig).unwrap();
        let doubled =
            photometric_metric(left, right, &sb.gt_left[0].scaled(2.0), &sb.bundle.rig).unwrap();
        assert!(
            doubled.l1 > 10.0 * exact.l1.max(1e-6),
            "exact {} vs doubled {}",
            exact.l1,
            doubled.l1
        );
    }

    #[test]
    fn out_of_bounds_reprojections_are_counted() {
        let sb = generate(&SceneSpec::preset("flat", 0).unwrap()).unwrap();
        let left = &sb.bundle.left_images.as_ref().unwrap()[0];
        let right = &sb.bundle.right_images.as_ref().unwrap()[0];
        let r = photometric_metric(left, right, &sb.gt_left[0], &sb.bundle.rig).unwrap();
        // Disparity is exactly 4 px, so the four left columns fall off the
        // right image.
        assert_eq!(r.excluded_pixels, 4 * 48);
        assert_eq!(r.covered_pixels, 60 * 48);
    }

    #[test]
    fn tiny_depth_pushes_everything_out_of_bounds() {
        let img = Grid::new(8, 6, 0.5);
        let spec = SceneSpec::preset("flat", 0).unwrap();
        let depth = DepthMap::from_values(Grid::new(8, 6, 0.001));
        assert!(photometric_metric(&img, &img, &depth, &spec.rig).is_err());
    }

    #[test]
    fn photometric_skips_image_under_invalid_depth() {
        let sb = generate(&SceneSpec::preset("slanted", 2).unwrap()).unwrap();
        let left = &sb.bundle.left_images.as_ref().unwrap()[0];
        let right = &sb.bundle.right_images.as_ref().unwrap()[0];
        let mut holed = sb.gt_left[0].values().clone();
        holed.set(30, 20, 0.0);
        let holed = DepthMap::from_values(holed);
        let mut left_b = left.clone();
        left_b.set(30, 20, 0.123);
        let a = photometric_metric(left, right, &holed, &sb.bundle.rig).unwrap();
        let b = photometric_metric(&left_b, right, &holed, &sb.bundle.rig).unwrap();
        assert_eq!(a.l1.to_bits(), b.l1.to_bits());
        assert_eq!(a.l2.to_bits(), b.l2.to_bits());
    }

    #[test]
    fn sequence_mean_is_unweighted() {
        let a = DepthEvalResult {
            abs_rel: 0.1,
            exceed_1: 0.0,
            exceed_2: 0.0,
            exceed_3: 0.0,
            evaluated_pixels: 1,
        };
        let b = DepthEvalResult {
            abs_rel: 0.3,
            exceed_1: 1.0,
            exceed_2: 0.5,
            exceed_3: 0.0,
            evaluated_pixels: 3,
        };
        let m = eval_sequence(&[a, b]).unwrap();
        assert!((m.abs_rel - 0.2).abs() < 1e-15);
        assert_eq!(m.exceed_1, 0.5);
        assert_eq!(m.exceed_2, 0.25);
        assert_eq!(m.evaluated_pixels, 4);
        let swapped = eval_sequence(&[b, a]).unwrap();
        assert_eq!(m.abs_rel, swapped.abs_rel);
        let single = eval_sequence(&[a]).unwrap();
        assert_eq!(single, a);
        assert!(eval_sequence(&[]).is_err());
    }

    #[test]
    fn photo_sequence_mean_matches_example() {
        let r = |l1: f64| PhotoEvalResult {
            l1,
            l2: l1 * l1,
            covered_pixels: 10,
            excluded_pixels: 1,
        };
        let m = eval_sequence_photo(&[r(0.1), r(0.3)]).unwrap();
        assert!((m.l1 - 0.2).abs() < 1e-15);
        assert_eq!(m.covered_pixels, 20);
        assert_eq!(m.excluded_pixels, 2);
    }
}
