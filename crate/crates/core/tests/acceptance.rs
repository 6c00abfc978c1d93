//! Release gate. One test per shipping criterion; each asserts its
//! tolerance and runtime budget, then prints a single PASS line with the
//! measured numbers (visible under --nocapture).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use depthtune::{
    align_scale, bundle_loss, consistency_mask, contrastive_loss, edge_mask, eval_depth,
    eval_sequence, eval_sequence_photo, generate, gradient_check, multiscale_gradient_loss,
    perturb, photometric_metric, read_flo, read_kitti_poses, read_pfm, read_pfm_depth,
    read_png16_depth, refine, write_flo, write_kitti_poses, write_pfm, write_pfm_depth,
    write_png16_depth, CameraIntrinsics, DepthMap, EdgeLossConfig, EdgeLossKind, EdgeMaskKind,
    FlowField, Grid, LossWeights, Perturbation, PhotoEvalResult, RefinerConfig, RigidTransform,
    Sampling, SceneSpec, StereoRig, SyntheticBundle, DEFAULT_FB_THRESHOLD,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn budget(start: Instant, limit: Duration, what: &str) -> Duration {
    let took = start.elapsed();
    assert!(took <= limit, "{what} took {took:?}, budget {limit:?}");
    took
}

/// Mean photometric l1 of the bundle's own images against the given left
/// depths.
fn photo_l1(sb: &SyntheticBundle, depths: &[DepthMap]) -> f64 {
    let left = sb.bundle.left_images.as_ref().unwrap();
    let right = sb.bundle.right_images.as_ref().unwrap();
    let per: Vec<PhotoEvalResult> = depths
        .iter()
        .enumerate()
        .map(|(i, d)| photometric_metric(&left[i], &right[i], d, &sb.bundle.rig).unwrap())
        .collect();
    eval_sequence_photo(&per).unwrap().l1
}

fn mean_abs_rel(pred: &[DepthMap], gt: &[DepthMap]) -> f64 {
    let per: Vec<_> = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| eval_depth(p, g).unwrap())
        .collect();
    eval_sequence(&per).unwrap().abs_rel
}

fn noisy_depths(maps: &[DepthMap], sigma: f64, seed0: u64) -> Vec<DepthMap> {
    maps.iter()
        .enumerate()
        .map(|(i, d)| perturb(d, &Perturbation::Noise { sigma }, seed0 + i as u64).unwrap())
        .collect()
}

/// Ground-truth depths on smooth scenes sit at the loss floor: geometric
/// total below 1e-6 and photometric l1 at the interpolation floor, for
/// three scene families and two seeds each.
#[test]
fn criterion_1_ground_truth_scores_zero_loss() {
    let start = Instant::now();
    let mut worst_geo = 0.0f64;
    let mut worst_l1 = 0.0f64;
    for name in ["flat", "slanted", "slanted-v"] {
        for seed in [0, 1] {
            let sb = generate(&SceneSpec::preset(name, seed).unwrap()).unwrap();
            let geo = bundle_loss(&sb.bundle, &RefinerConfig::default())
                .unwrap()
                .geometric
                .total;
            let l1 = photo_l1(&sb, &sb.gt_left);
            assert!(geo < 1e-6, "{name} seed {seed}: geometric {geo}");
            assert!(l1 < 1e-3, "{name} seed {seed}: photometric l1 {l1}");
            worst_geo = worst_geo.max(geo);
            worst_l1 = worst_l1.max(l1);
        }
    }
    let took = budget(start, Duration::from_secs(10), "zero-loss oracle");
    println!(
        "criterion 1 PASS: 3 scenes x 2 seeds, worst geometric {worst_geo:.3e} < 1e-6, \
         worst photometric l1 {worst_l1:.3e} < 1e-3, {took:.2?} < 10s"
    );
}

/// Central-difference check of one edge loss's analytic gradient at
/// randomly sampled pixels of d_cur; kink-adjacent samples (max/min ties,
/// clamp boundaries) are rejected by comparing h- and 2h-step quotients.
fn edge_fd_check(
    kind: EdgeLossKind,
    d0: &DepthMap,
    d_cur: &DepthMap,
    cfg: &EdgeLossConfig,
    samples: usize,
    seed: u64,
) -> (usize, f64) {
    let (_, grad) = edge_loss_gradient(kind, d0, d_cur, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = d_cur.clone();
    let mut checked = 0usize;
    let mut worst = 0.0f64;
    for _ in 0..100 * samples {
        if checked >= samples {
            break;
        }
        let x = rng.random_range(0..d_cur.width());
        let y = rng.random_range(0..d_cur.height());
        let Some(d) = d_cur.get(x, y) else { continue };
        let h = 1e-5 * d;
        let mut eval = |v: f64| -> f64 {
            work.set(x, y, v);
            edge_loss(kind, d0, &work, cfg).total
        };
        let lp = eval(d + h);
        let lm = eval(d - h);
        let lp2 = eval(d + 2.0 * h);
        let lm2 = eval(d - 2.0 * h);
        eval(d);
        let fd = (lp - lm) / (2.0 * h);
        let fd2 = (lp2 - lm2) / (4.0 * h);
        if (fd - fd2).abs() > 1e-3 * fd.abs().max(fd2.abs()).max(1e-6) {
            continue;
        }
        checked += 1;
        let analytic = grad.at(x, y);
        let denom = analytic.abs().max(fd.abs());
        if denom < 1e-9 {
            continue;
        }
        worst = worst.max((analytic - fd).abs() / denom);
    }
    (checked, worst)
}

/// Analytic gradients match central finite differences on a 48x32 noisy
/// scene: the assembled pair-consistency objective through the refiner's
/// own checker, and each edge loss against a perturbed current map.
#[test]
fn criterion_2_analytic_gradients_match_finite_differences() {
    let start = Instant::now();
    let mut spec = SceneSpec::preset("slanted", 0).unwrap();
    spec.rig = StereoRig::new(
        CameraIntrinsics::new(60.0, 60.0, 23.5, 15.5, 48, 32).unwrap(),
        0.5,
    )
    .unwrap();
    let sb = generate(&spec).unwrap();
    let mut bundle = sb.bundle;
    bundle.left_depths = noisy_depths(&bundle.left_depths, 0.1, 40);
    bundle.right_depths = Some(noisy_depths(bundle.right_depths.as_ref().unwrap(), 0.1, 80));

    let cfg = RefinerConfig {
        edge_kind: EdgeLossKind::None,
        sampling: Sampling::Hierarchical,
        ..Default::default()
    };
    let geo = gradient_check(&bundle, &cfg, 200).unwrap();
    assert!(geo.checked >= 200, "only {} pixels checked", geo.checked);
    assert!(geo.max_rel_err < 1e-4, "geometric max relative error {}", geo.max_rel_err);

    // Edge losses need a current map away from the anchor, where the norm
    // and clamp terms are differentiable.
    let edge_cfg = EdgeLossConfig::default();
    let d0 = &sb.gt_left[0];
    let d_cur = perturb(d0, &Perturbation::Noise { sigma: 0.1 }, 11).unwrap();
    let mut total_checked = geo.checked;
    let mut worst = geo.max_rel_err;
    for kind in [EdgeLossKind::Multiscale, EdgeLossKind::Contrastive] {
        let (checked, err) = edge_fd_check(kind, d0, &d_cur, &edge_cfg, 200, 17);
        assert!(checked >= 200, "{kind:?}: only {checked} pixels checked");
        assert!(err < 1e-4, "{kind:?}: max relative error {err}");
        total_checked += checked;
        worst = worst.max(err);
    }
    let took = budget(start, Duration::from_secs(60), "gradient check");
    println!(
        "criterion 2 PASS: {total_checked} pixels across geometric and both edge losses, \
         max relative error {worst:.3e} < 1e-4, {took:.2?} < 60s"
    );
}

/// The standard recovery benchmark: 64x48, 5 frames, 10% multiplicative
/// depth noise, exact flows and poses, 100 epochs. The learning rate is the
/// 4e-5 default scaled x10 (4e-4), matched to this surrogate's loss scale.
#[test]
fn criterion_3_refinement_recovers_from_noise() {
    let start = Instant::now();
    let sb = generate(&SceneSpec::preset("slanted", 0).unwrap()).unwrap();
    let mut bundle = sb.bundle.clone();
    bundle.left_depths = noisy_depths(&bundle.left_depths, 0.1, 300);
    bundle.right_depths = Some(noisy_depths(bundle.right_depths.as_ref().unwrap(), 0.1, 400));

    let initial_abs_rel = mean_abs_rel(&bundle.left_depths, &sb.gt_left);
    let initial_l1 = photo_l1(&sb, &bundle.left_depths);

    let cfg = RefinerConfig {
        epochs: 100,
        learning_rate: 4e-4,
        edge_kind: EdgeLossKind::None,
        ..Default::default()
    };
    let report = refine(&bundle, &cfg).unwrap();
    let final_abs_rel = mean_abs_rel(&report.final_left, &sb.gt_left);
    let final_l1 = photo_l1(&sb, &report.final_left);

    assert!(
        final_abs_rel <= 0.5 * initial_abs_rel,
        "abs_rel {initial_abs_rel} -> {final_abs_rel}"
    );
    assert!(
        final_l1 <= 0.7 * initial_l1,
        "photometric l1 {initial_l1} -> {final_l1}"
    );
    let took = budget(start, Duration::from_secs(300), "recovery benchmark");
    println!(
        "criterion 3 PASS: abs_rel {initial_abs_rel:.4} -> {final_abs_rel:.4} (<= 0.5x), \
         photometric l1 {initial_l1:.3e} -> {final_l1:.3e} (>= 30% better), \
         lr 4e-4 = 10x the 4e-5 default, {took:.2?} < 5min"
    );
}

/// Starting from a blurred and noisy initialization of a scene with a real
/// depth discontinuity, refinement with the contrastive loss keeps strictly
/// more of the ground-truth h=1 ratio-edge pixels than the same run with
/// the edge term switched off.
#[test]
fn criterion_4_contrastive_loss_retains_depth_edges() {
    let start = Instant::now();
    let sb = generate(&SceneSpec::preset("sphere", 0).unwrap()).unwrap();
    let edge_cfg = EdgeLossConfig::default();
    let gt_masks: Vec<_> = sb
        .gt_left
        .iter()
        .map(|d| edge_mask(d, 1, &edge_cfg, EdgeMaskKind::Ratio))
        .collect();

    let degrade = |maps: &[DepthMap], seed0: u64| -> Vec<DepthMap> {
        maps.iter()
            .enumerate()
            .map(|(i, d)| {
                let blurred = perturb(d, &Perturbation::Blur { radius: 1.0 }, 0).unwrap();
                perturb(&blurred, &Perturbation::Noise { sigma: 0.03 }, seed0 + i as u64).unwrap()
            })
            .collect()
    };
    let mut bundle = sb.bundle.clone();
    bundle.left_depths = degrade(&bundle.left_depths, 500);
    bundle.right_depths = Some(degrade(bundle.right_depths.as_ref().unwrap(), 600));

    let retained = |w_edge: f64| -> usize {
        let cfg = RefinerConfig {
            epochs: 60,
            learning_rate: 4e-4,
            edge_kind: EdgeLossKind::Contrastive,
            weights: LossWeights {
                w_edge,
                ..Default::default()
            },
            ..Default::default()
        };
        let report = refine(&bundle, &cfg).unwrap();
        report
            .final_left
            .iter()
            .zip(&gt_masks)
            .map(|(d, m0)| {
                let m = edge_mask(d, 1, &edge_cfg, EdgeMaskKind::Ratio);
                let mut kept = 0usize;
                for y in 0..d.height() {
                    for x in 0..d.width() {
                        if m0.get(x, y) && m.get(x, y) {
                            kept += 1;
                        }
                    }
                }
                kept
            })
            .sum()
    };

    let with_edge = retained(1.0);
    let without_edge = retained(0.0);
    assert!(
        with_edge > without_edge,
        "edge pixels retained: with contrastive {with_edge}, without {without_edge}"
    );
    let took = budget(start, Duration::from_secs(300), "edge retention");
    println!(
        "criterion 4 PASS: h=1 ratio-edge pixels retained {with_edge} with contrastive \
         > {without_edge} without, {took:.2?} < 5min"
    );
}

/// Both edge losses read the current depths only through scale-invariant
/// quantities: rescaling every current depth leaves them unchanged.
#[test]
fn criterion_5_edge_losses_are_depth_scale_invariant() {
    let sb = generate(&SceneSpec::preset("sphere", 1).unwrap()).unwrap();
    let d0 = &sb.gt_left[0];
    let d_cur = perturb(d0, &Perturbation::Noise { sigma: 0.1 }, 7).unwrap();
    let cfg = EdgeLossConfig::default();

    let ms_base = multiscale_gradient_loss(d0, &d_cur, &cfg).total;
    let ct_base = contrastive_loss(d0, &d_cur, &cfg).total;
    assert!(ms_base > 0.0 && ct_base > 0.0, "degenerate baseline");

    let mut worst = 0.0f64;
    for s in [0.5, 2.0, 10.0] {
        let scaled = d_cur.scaled(s);
        let ms = multiscale_gradient_loss(d0, &scaled, &cfg).total;
        let ct = contrastive_loss(d0, &scaled, &cfg).total;
        worst = worst.max((ms - ms_base).abs()).max((ct - ct_base).abs());
        assert!((ms - ms_base).abs() <= 1e-9, "multiscale drift {} at s={s}", ms - ms_base);
        assert!((ct - ct_base).abs() <= 1e-9, "contrastive drift {} at s={s}", ct - ct_base);
    }
    println!(
        "criterion 5 PASS: edge losses drift {worst:.3e} <= 1e-9 under current-depth \
         rescale s in {{0.5, 2, 10}}"
    );
}

/// The documented default constants, each with a behavioral consequence.
#[test]
fn criterion_6_default_constants_and_their_consequences() {
    // lambda = 0.1: combined pair loss recomposes as spatial + 0.1 * disparity.
    let weights = LossWeights::default();
    assert_eq!(weights.lambda, 0.1);
    let sb = generate(&SceneSpec::preset("slanted", 2).unwrap()).unwrap();
    let mut bundle = sb.bundle;
    bundle.left_depths = noisy_depths(&bundle.left_depths, 0.1, 900);
    let report = bundle_loss(&bundle, &RefinerConfig::default()).unwrap();
    let (_, b) = report
        .geometric
        .pairs
        .iter()
        .find(|(_, b)| b.disparity > 0.0)
        .expect("a pair with disparity residual");
    assert!((b.combined - (b.spatial + 0.1 * b.disparity)).abs() <= 1e-12 * b.combined.max(1.0));

    // Gradient scales {1, 2, 4, 6, 8}: the per-scale report lists exactly them.
    let cfg = EdgeLossConfig::default();
    assert_eq!(cfg.scales, vec![1, 2, 4, 6, 8]);
    let er = multiscale_gradient_loss(&sb.gt_left[0], &bundle.left_depths[0], &cfg);
    let listed: Vec<usize> = er.per_scale.iter().map(|s| s.scale).collect();
    assert_eq!(listed, vec![1, 2, 4, 6, 8]);

    // alpha = 0.02 with threshold 0.02 * 2^(h-1): doubling alpha can only
    // shrink the mask.
    assert_eq!(cfg.alpha, 0.02);
    for h in [1usize, 2, 4, 6, 8] {
        assert_eq!(cfg.si_threshold(h), 0.02 * 2f64.powi(h as i32 - 1));
    }
    let doubled = EdgeLossConfig {
        alpha: 0.04,
        ..Default::default()
    };
    let m1 = edge_mask(&sb.gt_left[0], 1, &cfg, EdgeMaskKind::ScaleInvariant).count();
    let m2 = edge_mask(&sb.gt_left[0], 1, &doubled, EdgeMaskKind::ScaleInvariant).count();
    assert!(m2 <= m1, "doubling alpha grew the mask {m1} -> {m2}");

    // Ratio threshold 1.05 * 2^(h-1): a 6% step is an h=1 edge, a 4% step
    // is not.
    assert_eq!(cfg.ratio_base, 1.05);
    for h in [1usize, 2, 4, 6, 8] {
        assert_eq!(cfg.ratio_threshold(h), 1.05 * 2f64.powi(h as i32 - 1));
    }
    let step = |hi: f64| {
        DepthMap::from_values(Grid::from_vec(2, 2, vec![1.0, hi, 1.0, hi]))
    };
    assert_eq!(edge_mask(&step(1.06), 1, &cfg, EdgeMaskKind::Ratio).count(), 1);
    assert_eq!(edge_mask(&step(1.04), 1, &cfg, EdgeMaskKind::Ratio).count(), 0);

    // Forward-backward threshold 1 px: an 0.8 px round trip passes, a
    // 1.2 px one is masked out.
    assert_eq!(DEFAULT_FB_THRESHOLD, 1.0);
    let forward = FlowField::zeros(8, 8);
    let mut backward = FlowField::zeros(8, 8);
    backward.set(3, 3, [0.8, 0.0]);
    backward.set(4, 4, [1.2, 0.0]);
    let mask = consistency_mask(&forward, &backward, DEFAULT_FB_THRESHOLD).unwrap();
    assert!(mask.get(3, 3));
    assert!(!mask.get(4, 4));
    assert_eq!(mask.valid_count(), 63);

    println!(
        "criterion 6 PASS: lambda 0.1, scales {{1,2,4,6,8}}, alpha 0.02, ratio base 1.05, \
         fb threshold 1 px, each with a behavioral consequence"
    );
}

/// Worked metric examples hold exactly, and the closed-form alignment scale
/// matches a golden-section search over the same objective.
#[test]
fn criterion_7_metric_examples_and_alignment_oracle() {
    let gt = DepthMap::from_values(Grid::from_vec(2, 2, vec![10.0, 5.0, 2.5, 8.0]));

    // pred = gt: zero error, zero exceedance.
    let r = eval_depth(&gt, &gt).unwrap();
    assert_eq!((r.abs_rel, r.exceed_1, r.exceed_2, r.exceed_3), (0.0, 0.0, 0.0, 0.0));

    // 11 vs 10 on one pixel: abs_rel 0.1, ratio 1.1 below every threshold.
    let one = |v: f64| DepthMap::from_values(Grid::from_vec(1, 1, vec![v]));
    let r = eval_depth(&one(11.0), &one(10.0)).unwrap();
    assert_eq!(r.abs_rel, 0.1);
    assert_eq!(r.exceed_1, 0.0);

    // 13 vs 10: 1.3 exceeds 1.25 but not 1.5625.
    let r = eval_depth(&one(13.0), &one(10.0)).unwrap();
    assert_eq!((r.exceed_1, r.exceed_2), (1.0, 0.0));

    // Halved depths align back exactly with s = 2; identity gives s = 1.
    let (aligned, s) = align_scale(&gt.scaled(0.5), &gt).unwrap();
    assert_eq!(s, 2.0);
    assert_eq!(eval_depth(&aligned, &gt).unwrap().abs_rel, 0.0);
    assert_eq!(align_scale(&gt, &gt).unwrap().1, 1.0);

    // Golden-section minimization of sum (s*pred - gt)^2 agrees with the
    // closed form within 1e-6.
    let sb = generate(&SceneSpec::preset("wedge", 0).unwrap()).unwrap();
    let gt_map = &sb.gt_left[0];
    let pred = perturb(gt_map, &Perturbation::Noise { sigma: 0.2 }, 3).unwrap();
    let (_, s_ls) = align_scale(&pred, gt_map).unwrap();
    let objective = |s: f64| -> f64 {
        let mut sum = 0.0;
        for y in 0..gt_map.height() {
            for x in 0..gt_map.width() {
                let (p, g) = (pred.get(x, y).unwrap(), gt_map.get(x, y).unwrap());
                sum += (s * p - g) * (s * p - g);
            }
        }
        sum
    };
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (1e-3, 1e3);
    while hi - lo > 1e-9 {
        let a = hi - phi * (hi - lo);
        let b = lo + phi * (hi - lo);
        if objective(a) < objective(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    let s_gs = 0.5 * (lo + hi);
    assert!(
        (s_gs - s_ls).abs() < 1e-6,
        "golden section {s_gs} vs closed form {s_ls}"
    );

    // Identical constant images: zero photometric distance at any depth.
    let flat_img = Grid::new(16, 12, 0.5);
    let depth = DepthMap::from_values(Grid::new(16, 12, 4.0));
    let rig = StereoRig::new(
        CameraIntrinsics::new(16.0, 16.0, 7.5, 5.5, 16, 12).unwrap(),
        0.5,
    )
    .unwrap();
    let r = photometric_metric(&flat_img, &flat_img, &depth, &rig).unwrap();
    assert_eq!((r.l1, r.l2), (0.0, 0.0));

    // Exact depth on a textured render sits at the interpolation floor;
    // doubling every depth strictly worsens it.
    let left = &sb.bundle.left_images.as_ref().unwrap()[0];
    let right = &sb.bundle.right_images.as_ref().unwrap()[0];
    let exact = photometric_metric(left, right, gt_map, &sb.bundle.rig).unwrap();
    assert!(exact.l1 < 1e-3, "interpolation floor {}", exact.l1);
    let doubled = photometric_metric(left, right, &gt_map.scaled(2.0), &sb.bundle.rig).unwrap();
    assert!(doubled.l1 > exact.l1);

    // Sequence aggregation: identity on one frame, plain mean on two,
    // order-independent.
    let two = |l1a: f64, l1b: f64| {
        let mk = |l1: f64| PhotoEvalResult {
            l1,
            l2: l1 * l1,
            covered_pixels: 10,
            excluded_pixels: 0,
        };
        (mk(l1a), mk(l1b))
    };
    let (a, b) = two(0.1, 0.3);
    assert_eq!(eval_sequence_photo(&[a]).unwrap().l1, a.l1);
    assert_eq!(eval_sequence_photo(&[a, b]).unwrap().l1, 0.2);
    assert_eq!(
        eval_sequence_photo(&[a, b]).unwrap().l1,
        eval_sequence_photo(&[b, a]).unwrap().l1
    );

    println!(
        "criterion 7 PASS: worked metric examples exact, golden-section scale within \
         {:.1e} of closed form",
        (s_gs - s_ls).abs()
    );
}

/// Binary formats survive a write/read round trip and readers never panic
/// on garbage.
#[test]
fn criterion_8_formats_round_trip_and_survive_fuzz() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(42);

    // Flow: f32 payload returns bit-identically.
    let mut flow = FlowField::zeros(7, 5);
    for y in 0..5 {
        for x in 0..7 {
            let v = |r: &mut ChaCha8Rng| r.random_range(-20.0f32..20.0) as f64;
            flow.set(x, y, [v(&mut rng), v(&mut rng)]);
        }
    }
    let p = dir.path().join("t.flo");
    write_flo(&p, &flow).unwrap();
    assert_eq!(read_flo(&p).unwrap(), flow);

    // PFM: f32 grid and masked depth map, value-identical.
    let img = Grid::from_vec(4, 3, (0..12).map(|i| i as f64 / 4.0).collect());
    let p = dir.path().join("t.pfm");
    write_pfm(&p, &img).unwrap();
    assert_eq!(read_pfm(&p).unwrap(), img);
    let mut depth = DepthMap::from_values(Grid::from_vec(4, 3, vec![2.0; 12]));
    depth.invalidate(1, 1);
    let p = dir.path().join("d.pfm");
    write_pfm_depth(&p, &depth).unwrap();
    assert_eq!(read_pfm_depth(&p).unwrap(), depth);

    // PNG16: quantized, so one write/read settles to a fixed point.
    let noisy = DepthMap::from_values(Grid::from_vec(
        4,
        3,
        (0..12).map(|_| rng.random_range(0.01..250.0)).collect(),
    ));
    let p1 = dir.path().join("a.png");
    let p2 = dir.path().join("b.png");
    write_png16_depth(&p1, &noisy, 1.0 / 256.0).unwrap();
    let once = read_png16_depth(&p1, 1.0 / 256.0).unwrap();
    write_png16_depth(&p2, &once, 1.0 / 256.0).unwrap();
    assert_eq!(read_png16_depth(&p2, 1.0 / 256.0).unwrap(), once);

    // Poses: value-identical through the text format.
    let poses: Vec<RigidTransform> = (0..4)
        .map(|i| {
            let angle = 0.1 * i as f64;
            RigidTransform {
                rotation: nalgebra::Rotation3::from_euler_angles(0.0, angle, 0.0).into_inner(),
                translation: nalgebra::Vector3::new(0.5 * i as f64, 0.25, -1.0),
            }
        })
        .collect();
    let p = dir.path().join("poses.txt");
    write_kitti_poses(&p, &poses).unwrap();
    assert_eq!(read_kitti_poses(&p).unwrap().0, poses);

    // Garbage in, Err or Ok out; never a panic.
    for case in 0..200 {
        let len = rng.random_range(0..512);
        let mut bytes = vec![0u8; len];
        rng.fill(bytes.as_mut_slice());
        if case % 4 == 1 && len >= 4 {
            bytes[..4].copy_from_slice(b"PIEH");
        }
        if case % 4 == 2 && len >= 3 {
            bytes[..3].copy_from_slice(b"Pf\n");
        }
        let p = dir.path().join("fuzz.bin");
        fs::write(&p, &bytes).unwrap();
        let _ = read_flo(&p);
        let _ = read_pfm(&p);
        let _ = read_pfm_depth(&p);
        let _ = read_png16_depth(&p, 1.0 / 256.0);
        let _ = read_kitti_poses(&p);
    }

    println!("criterion 8 PASS: flo/pfm/png16/pose round trips identical, 200 fuzz inputs survived");
}

fn tree_bytes(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

/// The full CLI pipeline is a pure function of the manifest: rerunning
/// synth + refine + eval in a fresh directory reproduces every output file
/// byte for byte.
#[test]
fn criterion_9_cli_rerun_is_byte_identical() {
    let bin = env!("CARGO_BIN_EXE_depthtune");
    let scene = "[scene]\npreset = wedge\nseed = 9\nframes = 3\n\n[perturb]\nnoise_sigma = 0.05\nseed = 4\n";
    let mut trees = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let scene_path = dir.path().join("scene.manifest");
        fs::write(&scene_path, scene).unwrap();
        let bundle = dir.path().join("bundle");
        let refined = dir.path().join("refined");
        let manifest = bundle.join("run.manifest");
        let gt = bundle.join("gt");
        let steps: &[&[&str]] = &[
            &["synth", scene_path.to_str().unwrap(), bundle.to_str().unwrap()],
            &[
                "refine",
                manifest.to_str().unwrap(),
                refined.to_str().unwrap(),
                "--epochs",
                "4",
                "--lr",
                "4e-4",
                "--edge",
                "none",
            ],
            &[
                "eval",
                manifest.to_str().unwrap(),
                refined.to_str().unwrap(),
                gt.to_str().unwrap(),
            ],
        ];
        for args in steps {
            let out = Command::new(bin).args(*args).output().unwrap();
            assert!(
                out.status.success(),
                "{args:?}: {}",
                String::from_utf8_lossy(&out.stderr)
            );
        }
        let mut tree = tree_bytes(dir.path());
        tree.remove("scene.manifest");
        trees.push(tree);
    }
    let (a, b) = (&trees[0], &trees[1]);
    assert_eq!(
        a.keys().collect::<Vec<_>>(),
        b.keys().collect::<Vec<_>>(),
        "file inventories differ"
    );
    let mut total = 0usize;
    for (name, bytes) in a {
        assert_eq!(bytes, &b[name], "{name} differs between reruns");
        total += 1;
    }
    println!("criterion 9 PASS: {total} pipeline output files byte-identical across reruns");
}
