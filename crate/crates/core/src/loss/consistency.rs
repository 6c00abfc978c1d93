//! Spatial and disparity residuals (per-pair geometric consistency) and
//! their analytic gradients with respect to source and target depth.

use std::fmt;

use nalgebra::{Vector2, Vector3};

use crate::flow::{FlowField, ValidityMask};
use crate::geometry::{CameraIntrinsics, RigidTransform};
use crate::grid::{DepthMap, Grid, Tap};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairKind {
    LeftRight,
    Temporal,
}

/// Identifies a frame pair: (i, i) left-to-right, or (i, j) temporal on the
/// left view.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairId {
    pub kind: PairKind,
    pub source: usize,
    pub target: usize,
}

impl fmt::Display for PairId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            PairKind::LeftRight => write!(f, "lr {}", self.source),
            PairKind::Temporal => write!(f, "t {}->{}", self.source, self.target),
        }
    }
}

/// Everything needed to evaluate one pair's consistency loss. The flow and
/// mask live on the source grid; the transform maps source-camera points
/// into the target camera.
pub struct FramePairContext<'a> {
    pub id: PairId,
    pub source_depth: &'a DepthMap,
    pub target_depth: &'a DepthMap,
    pub flow: &'a FlowField,
    pub mask: &'a ValidityMask,
    pub source_to_target: RigidTransform,
    pub intrinsics: CameraIntrinsics,
}

impl FramePairContext<'_> {
    fn assert_consistent(&self) {
        let (w, h) = (self.source_depth.width(), self.source_depth.height());
        assert!(
            self.target_depth.width() == w
                && self.target_depth.height() == h
                && self.flow.width() == w
                && self.flow.height() == h
                && self.mask.width() == w
                && self.mask.height() == h
                && self.intrinsics.width == w
                && self.intrinsics.height == h,
            "pair {} grids must share dimensions",
            self.id
        );
    }
}

/// Loss weights: λ scales the disparity term inside each pair loss, w_edge
/// scales the edge loss against the geometric total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda: f64,
    pub w_edge: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda: 0.1,
            w_edge: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PairLossBreakdown {
    /// Mean spatial residual in pixels over contributing pixels.
    pub spatial: f64,
    /// Mean disparity residual (focal-scaled inverse depth).
    pub disparity: f64,
    /// spatial + λ·disparity.
    pub combined: f64,
    /// Pixels that survived the mask and all runtime exclusions.
    pub valid_count: usize,
}

/// Gradients of one pair loss with respect to both depth maps.
pub struct PairGradient {
    pub source: Grid<f64>,
    pub target: Grid<f64>,
    pub breakdown: PairLossBreakdown,
}

/// Per-pixel evaluation with the intermediates the gradient needs.
struct PixelTerm {
    spatial: f64,
    disparity: f64,
    /// R·a, the rotated ray; ∂c'/∂d.
    dir: Vector3<f64>,
    /// c' = d·dir + T in the target camera.
    cam: Vector3<f64>,
    /// p − f.
    residual: Vector2<f64>,
    /// sign(1/z' − 1/z_t), 0 at the L1 kink.
    sign_q: f64,
    /// Bilinear read of the target depth at f(x).
    z_target: f64,
    taps: Vec<Tap>,
}

/// Evaluates one masked pixel. None when the pixel is excluded at runtime:
/// invalid source depth, transformed point behind the camera, flow target
/// out of bounds, or invalid target depth under the bilinear footprint.
fn eval_pixel(ctx: &FramePairContext, x: usize, y: usize) -> Option<PixelTerm> {
    if !ctx.mask.get(x, y) {
        return None;
    }
    let d = ctx.source_depth.get(x, y)?;
    let k = &ctx.intrinsics;
    let dir = ctx.source_to_target.rotation * k.ray(x as f64, y as f64);
    let cam = dir * d + ctx.source_to_target.translation;
    if cam.z <= 0.0 {
        return None;
    }
    let p = Vector2::new(k.fx * cam.x / cam.z + k.cx, k.fy * cam.y / cam.z + k.cy);

    let flow = ctx.flow.at(x, y);
    let f = Vector2::new(x as f64 + flow[0], y as f64 + flow[1]);
    let (z_target, taps) = ctx.target_depth.sample_with_taps(f.x, f.y)?;
    if z_target <= 0.0 {
        return None;
    }

    let residual = p - f;
    let q = 1.0 / cam.z - 1.0 / z_target;
    Some(PixelTerm {
        spatial: residual.norm(),
        disparity: k.fx * q.abs(),
        dir,
        cam,
        residual,
        sign_q: if q > 0.0 {
            1.0
        } else if q < 0.0 {
            -1.0
        } else {
            0.0
        },
        z_target,
        taps,
    })
}

/// Spatial residual ‖p(x) − f(x)‖₂ at one pixel; None when excluded.
pub fn spatial_residual(ctx: &FramePairContext, x: usize, y: usize) -> Option<f64> {
    eval_pixel(ctx, x, y).map(|t| t.spatial)
}

/// Disparity residual u·|1/z'(x) − 1/z_tgt(f(x))| at one pixel; None when
/// excluded.
pub fn disparity_residual(ctx: &FramePairContext, x: usize, y: usize) -> Option<f64> {
    eval_pixel(ctx, x, y).map(|t| t.disparity)
}

/// Mean spatial + λ·disparity over pixels valid in the mask and not
/// excluded at runtime. Zero valid pixels yield an all-zero breakdown.
pub fn pair_loss(ctx: &FramePairContext, w: &LossWeights) -> PairLossBreakdown {
    ctx.assert_consistent();
    let mut spatial_sum = 0.0;
    let mut disparity_sum = 0.0;
    let mut count = 0usize;
    for y in 0..ctx.source_depth.height() {
        for x in 0..ctx.source_depth.width() {
            if let Some(t) = eval_pixel(ctx, x, y) {
                spatial_sum += t.spatial;
                disparity_sum += t.disparity;
                count += 1;
            }
        }
    }
    if count == 0 {
        return PairLossBreakdown::default();
    }
    let n = count as f64;
    let spatial = spatial_sum / n;
    let disparity = disparity_sum / n;
    PairLossBreakdown {
        spatial,
        disparity,
        combined: spatial + w.lambda * disparity,
        valid_count: count,
    }
}

/// Analytic ∂(pair loss)/∂D for both depth maps. Source-depth gradients run
/// through lift→transform→project and through z'; target-depth gradients
/// distribute through the bilinear read of z_tgt to its grid neighbors.
/// Excluded pixels contribute zero; L1 kinks use subgradient 0.
pub fn pair_loss_gradient(ctx: &FramePairContext, w: &LossWeights) -> PairGradient {
    ctx.assert_consistent();
    let (width, height) = (ctx.source_depth.width(), ctx.source_depth.height());
    let mut g_src = Grid::zeros(width, height);
    let mut g_tgt = Grid::zeros(width, height);
    let mut spatial_sum = 0.0;
    let mut disparity_sum = 0.0;
    let mut count = 0usize;
    let k = &ctx.intrinsics;

    for y in 0..height {
        for x in 0..width {
            let Some(t) = eval_pixel(ctx, x, y) else {
                continue;
            };
            spatial_sum += t.spatial;
            disparity_sum += t.disparity;
            count += 1;

            let z = t.cam.z;
            // ∂p/∂d through c' = d·dir + T and the perspective divide.
            let dp_dd = Vector2::new(
                k.fx * (t.dir.x * z - t.cam.x * t.dir.z) / (z * z),
                k.fy * (t.dir.y * z - t.cam.y * t.dir.z) / (z * z),
            );
            let mut dd = 0.0;
            if t.spatial > 0.0 {
                dd += t.residual.dot(&dp_dd) / t.spatial;
            }
            // ∂/∂d of u·|1/z' − 1/z_t|; 1/z' has derivative −dir.z/z'².
            dd += w.lambda * k.fx * t.sign_q * (-t.dir.z / (z * z));
            g_src.set(x, y, g_src.at(x, y) + dd);

            // ∂/∂z_t is u·sign·(1/z_t²), split over the bilinear taps.
            let dzt = w.lambda * k.fx * t.sign_q / (t.z_target * t.z_target);
            for &(tx, ty, tw) in &t.taps {
                g_tgt.set(tx, ty, g_tgt.at(tx, ty) + dzt * tw);
            }
        }
    }

    if count == 0 {
        return PairGradient {
            source: g_src,
            target: g_tgt,
            breakdown: PairLossBreakdown::default(),
        };
    }
    let n = count as f64;
    for g in g_src.data_mut() {
        *g /= n;
    }
    for g in g_tgt.data_mut() {
        *g /= n;
    }
    let spatial = spatial_sum / n;
    let disparity = disparity_sum / n;
    PairGradient {
        source: g_src,
        target: g_tgt,
        breakdown: PairLossBreakdown {
            spatial,
            disparity,
            combined: spatial + w.lambda * disparity,
            valid_count: count,
        },
    }
}

#[derive(Debug, Clone, Default)]
pub struct GeometricLossReport {
    pub pairs: Vec<(PairId, PairLossBreakdown)>,
    pub lr_total: f64,
    pub temporal_total: f64,
    pub total: f64,
}

/// Sum of per-pair combined losses over both pair sets, reported separately
/// as L^LR and L^T.
pub fn geometric_loss(
    pairs_lr: &[FramePairContext],
    pairs_t: &[FramePairContext],
    w: &LossWeights,
) -> GeometricLossReport {
    let mut report = GeometricLossReport::default();
    for ctx in pairs_lr {
        let b = pair_loss(ctx, w);
        report.lr_total += b.combined;
        report.pairs.push((ctx.id, b));
    }
    for ctx in pairs_t {
        let b = pair_loss(ctx, w);
        report.temporal_total += b.combined;
        report.pairs.push((ctx.id, b));
    }
    report.total = report.lr_total + report.temporal_total;
    report
}
