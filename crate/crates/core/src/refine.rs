//! Test-time refinement: builds the pair sets, assembles the geometric and
//! edge losses over the whole sequence, and optimizes per-pixel inverse
//! depth with one full-batch adaptive-moment update per epoch.
//!
//! Depth is optimized directly instead of network weights, so the losses,
//! masks, and schedule act on exactly the quantity they constrain. Inverse
//! depth keeps the disparity term linear in the parameters.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bundle::{VideoBundle, View};
use crate::error::{Error, Result};
use crate::flow::{consistency_mask, FlowField, ValidityMask};
use crate::geometry::{relative_pose, RigidTransform};
use crate::grid::{DepthMap, Grid};
use crate::loss::consistency::{
    pair_loss, pair_loss_gradient, FramePairContext, GeometricLossReport, LossWeights, PairId,
    PairKind,
};
use crate::loss::edge::{
    edge_loss, edge_loss_gradient, EdgeLossConfig, EdgeLossKind, EdgeLossReport,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    Consecutive,
    Hierarchical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinerConfig {
    pub epochs: usize,
    /// Step scale in inverse-depth units per epoch.
    pub learning_rate: f64,
    pub weights: LossWeights,
    pub edge_kind: EdgeLossKind,
    pub edge: EdgeLossConfig,
    pub sampling: Sampling,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Depth clamp range in meters; parameters stay in [1/max, 1/min].
    pub min_depth: f64,
    pub max_depth: f64,
    /// Consumed by gradient_check sampling; the epoch loop itself is
    /// RNG-free.
    pub seed: u64,
}

impl Default for RefinerConfig {
    fn default() -> Self {
        RefinerConfig {
            epochs: 20,
            learning_rate: 4e-5,
            weights: LossWeights::default(),
            edge_kind: EdgeLossKind::Contrastive,
            edge: EdgeLossConfig::default(),
            sampling: Sampling::Consecutive,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            min_depth: 0.1,
            max_depth: 1000.0,
            seed: 0,
        }
    }
}

impl RefinerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidConfig(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.min_depth > 0.0 && self.max_depth.is_finite() && self.min_depth < self.max_depth)
        {
            return Err(Error::InvalidConfig(format!(
                "depth clamp range [{}, {}] is invalid",
                self.min_depth, self.max_depth
            )));
        }
        if !(self.weights.lambda.is_finite() && self.weights.lambda >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "lambda must be non-negative, got {}",
                self.weights.lambda
            )));
        }
        if !(self.weights.w_edge.is_finite() && self.weights.w_edge >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "edge weight must be non-negative, got {}",
                self.weights.w_edge
            )));
        }
        self.edge.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSets {
    /// Timestamps with a left-right pair.
    pub lr: Vec<usize>,
    /// Temporal pairs (i, j), i < j, on the left view.
    pub temporal: Vec<(usize, usize)>,
}

/// Left-right pairs at every timestamp plus temporal pairs: consecutive
/// neighbors, or all power-of-two gaps in hierarchical mode.
pub fn build_pair_sets(n: usize, sampling: Sampling) -> Result<PairSets> {
    if n < 2 {
        return Err(Error::InvalidConfig(format!(
            "temporal pairs need at least 2 frames, got {n}"
        )));
    }
    let temporal = match sampling {
        Sampling::Consecutive => (0..n - 1).map(|i| (i, i + 1)).collect(),
        Sampling::Hierarchical => {
            let mut pairs = Vec::new();
            let mut gap = 1;
            while gap < n {
                for i in 0..n - gap {
                    pairs.push((i, i + gap));
                }
                gap *= 2;
            }
            pairs
        }
    };
    Ok(PairSets {
        lr: (0..n).collect(),
        temporal,
    })
}

/// One pair with its precomputed validity mask and relative transform.
struct PreparedPair<'a> {
    id: PairId,
    source: (usize, View),
    target: (usize, View),
    flow: &'a FlowField,
    mask: ValidityMask,
    transform: RigidTransform,
}

/// Masks come from each pair's own forward-backward flow agreement.
/// Left-right pairs are skipped entirely when the bundle carries no
/// right-view depths; temporal pairs always run.
fn prepare_pairs<'a>(bundle: &'a VideoBundle, sets: &PairSets) -> Result<Vec<PreparedPair<'a>>> {
    let mut out = Vec::new();
    if bundle.right_depths.is_some() {
        for &i in &sets.lr {
            let pair = bundle.lr_flows.get(&i).ok_or_else(|| {
                Error::InvalidBundle(format!("missing left-right flow for frame {i}"))
            })?;
            out.push(PreparedPair {
                id: PairId {
                    kind: PairKind::LeftRight,
                    source: i,
                    target: i,
                },
                source: (i, View::Left),
                target: (i, View::Right),
                flow: &pair.forward,
                mask: consistency_mask(&pair.forward, &pair.backward, bundle.fb_threshold)?,
                transform: bundle.rig.left_to_right(),
            });
        }
    }
    for &(i, j) in &sets.temporal {
        let pair = bundle.t_flows.get(&(i, j)).ok_or_else(|| {
            Error::InvalidBundle(format!("missing temporal flow for pair ({i},{j})"))
        })?;
        out.push(PreparedPair {
            id: PairId {
                kind: PairKind::Temporal,
                source: i,
                target: j,
            },
            source: (i, View::Left),
            target: (j, View::Left),
            flow: &pair.forward,
            mask: consistency_mask(&pair.forward, &pair.backward, bundle.fb_threshold)?,
            transform: relative_pose(&bundle.trajectory[i], &bundle.trajectory[j]),
        });
    }
    Ok(out)
}

/// Current per-frame depths during optimization.
struct Current {
    left: Vec<DepthMap>,
    right: Option<Vec<DepthMap>>,
}

impl Current {
    fn get(&self, frame: usize, view: View) -> &DepthMap {
        match view {
            View::Left => &self.left[frame],
            View::Right => &self.right.as_ref().expect("right depths")[frame],
        }
    }
}

#[derive(Debug, Clone)]
pub struct LossReport {
    pub geometric: GeometricLossReport,
    /// Per left frame, against the initial-depth anchor.
    pub edge: Vec<EdgeLossReport>,
    /// Unweighted sum of the per-frame edge losses.
    pub edge_total: f64,
    /// geometric + w_edge · edge_total.
    pub total: f64,
    /// Per pair: (id, valid pixels, total pixels).
    pub mask_coverage: Vec<(PairId, usize, usize)>,
}

struct Gradients {
    left: Vec<Grid<f64>>,
    right: Option<Vec<Grid<f64>>>,
}

impl Gradients {
    fn zeros(bundle: &VideoBundle) -> Self {
        let (w, h) = (bundle.width(), bundle.height());
        let n = bundle.frame_count();
        Gradients {
            left: (0..n).map(|_| Grid::zeros(w, h)).collect(),
            right: bundle
                .right_depths
                .as_ref()
                .map(|_| (0..n).map(|_| Grid::zeros(w, h)).collect()),
        }
    }

    fn get_mut(&mut self, frame: usize, view: View) -> &mut Grid<f64> {
        match view {
            View::Left => &mut self.left[frame],
            View::Right => &mut self.right.as_mut().expect("right gradients")[frame],
        }
    }
}

fn accumulate(dst: &mut Grid<f64>, src: &Grid<f64>, scale: f64) {
    for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d += scale * s;
    }
}

/// Evaluates the total loss, optionally with depth-space gradients.
/// Non-finite pair or edge losses abort, naming the offender.
fn evaluate(
    bundle: &VideoBundle,
    pairs: &[PreparedPair],
    cur: &Current,
    d0: &[DepthMap],
    cfg: &RefinerConfig,
    epoch: usize,
    with_grad: bool,
) -> Result<(LossReport, Option<Gradients>)> {
    let mut geometric = GeometricLossReport::default();
    let mut grads = with_grad.then(|| Gradients::zeros(bundle));
    let mut mask_coverage = Vec::with_capacity(pairs.len());
    let pixel_count = bundle.width() * bundle.height();

    for pair in pairs {
        let ctx = FramePairContext {
            id: pair.id,
            source_depth: cur.get(pair.source.0, pair.source.1),
            target_depth: cur.get(pair.target.0, pair.target.1),
            flow: pair.flow,
            mask: &pair.mask,
            source_to_target: pair.transform,
            intrinsics: bundle.rig.intrinsics,
        };
        let breakdown = if let Some(grads) = grads.as_mut() {
            let g = pair_loss_gradient(&ctx, &cfg.weights);
            accumulate(grads.get_mut(pair.source.0, pair.source.1), &g.source, 1.0);
            accumulate(grads.get_mut(pair.target.0, pair.target.1), &g.target, 1.0);
            g.breakdown
        } else {
            pair_loss(&ctx, &cfg.weights)
        };
        if !breakdown.combined.is_finite() {
            return Err(Error::NonFiniteLoss {
                pair: pair.id.to_string(),
                epoch,
            });
        }
        match pair.id.kind {
            PairKind::LeftRight => geometric.lr_total += breakdown.combined,
            PairKind::Temporal => geometric.temporal_total += breakdown.combined,
        }
        mask_coverage.push((pair.id, pair.mask.valid_count(), pixel_count));
        geometric.pairs.push((pair.id, breakdown));
    }
    geometric.total = geometric.lr_total + geometric.temporal_total;

    let mut edge = Vec::with_capacity(d0.len());
    let mut edge_total = 0.0;
    for (i, anchor) in d0.iter().enumerate() {
        let report = if let Some(grads) = grads.as_mut() {
            let (report, g) = edge_loss_gradient(cfg.edge_kind, anchor, &cur.left[i], &cfg.edge);
            accumulate(&mut grads.left[i], &g, cfg.weights.w_edge);
            report
        } else {
            edge_loss(cfg.edge_kind, anchor, &cur.left[i], &cfg.edge)
        };
        if !report.total.is_finite() {
            return Err(Error::NonFiniteLoss {
                pair: format!("edge {i}"),
                epoch,
            });
        }
        edge_total += report.total;
        edge.push(report);
    }

    let total = geometric.total + cfg.weights.w_edge * edge_total;
    Ok((
        LossReport {
            geometric,
            edge,
            edge_total,
            total,
            mask_coverage,
        },
        grads,
    ))
}

/// Inverse-depth parameter grids with their validity templates.
struct Params {
    left: Vec<Grid<f64>>,
    left_valid: Vec<Grid<bool>>,
    right: Option<Vec<Grid<f64>>>,
    right_valid: Option<Vec<Grid<bool>>>,
    min_s: f64,
    max_s: f64,
}

impl Params {
    fn init(bundle: &VideoBundle, cfg: &RefinerConfig) -> Self {
        let min_s = 1.0 / cfg.max_depth;
        let max_s = 1.0 / cfg.min_depth;
        let convert = |maps: &[DepthMap]| -> (Vec<Grid<f64>>, Vec<Grid<bool>>) {
            let mut values = Vec::with_capacity(maps.len());
            let mut valid = Vec::with_capacity(maps.len());
            for m in maps {
                let mut grid = Grid::zeros(m.width(), m.height());
                for y in 0..m.height() {
                    for x in 0..m.width() {
                        if let Some(d) = m.get(x, y) {
                            grid.set(x, y, (1.0 / d).clamp(min_s, max_s));
                        }
                    }
                }
                values.push(grid);
                valid.push(m.validity().clone());
            }
            (values, valid)
        };
        let (left, left_valid) = convert(&bundle.left_depths);
        let (right, right_valid) = match &bundle.right_depths {
            Some(maps) => {
                let (v, m) = convert(maps);
                (Some(v), Some(m))
            }
            None => (None, None),
        };
        Params {
            left,
            left_valid,
            right,
            right_valid,
            min_s,
            max_s,
        }
    }

    fn materialize(&self) -> Current {
        let build = |values: &[Grid<f64>], valid: &[Grid<bool>]| -> Vec<DepthMap> {
            values
                .iter()
                .zip(valid)
                .map(|(s, v)| {
                    let mut depths = Grid::zeros(s.width(), s.height());
                    for ((d, s), ok) in depths.data_mut().iter_mut().zip(s.data()).zip(v.data()) {
                        if *ok {
                            *d = 1.0 / s;
                        }
                    }
                    DepthMap::from_parts(depths, Grid::from_vec(s.width(), s.height(), v.data().to_vec()))
                        .expect("positive params materialize to valid depths")
                })
                .collect()
        };
        Current {
            left: build(&self.left, &self.left_valid),
            right: self
                .right
                .as_ref()
                .map(|r| build(r, self.right_valid.as_ref().unwrap())),
        }
    }
}

/// First and second moment accumulators, one per parameter grid.
struct AdamState {
    m_left: Vec<Grid<f64>>,
    v_left: Vec<Grid<f64>>,
    m_right: Option<Vec<Grid<f64>>>,
    v_right: Option<Vec<Grid<f64>>>,
}

impl AdamState {
    fn zeros(params: &Params) -> Self {
        let zeros_like = |v: &[Grid<f64>]| -> Vec<Grid<f64>> {
            v.iter().map(|g| Grid::zeros(g.width(), g.height())).collect()
        };
        AdamState {
            m_left: zeros_like(&params.left),
            v_left: zeros_like(&params.left),
            m_right: params.right.as_ref().map(|r| zeros_like(r)),
            v_right: params.right.as_ref().map(|r| zeros_like(r)),
        }
    }
}

fn adam_update(
    s: &mut Grid<f64>,
    valid: &Grid<bool>,
    grad_depth: &Grid<f64>,
    m: &mut Grid<f64>,
    v: &mut Grid<f64>,
    cfg: &RefinerConfig,
    t: usize,
    min_s: f64,
    max_s: f64,
) {
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..s.data().len() {
        if !valid.data()[i] {
            continue;
        }
        let sv = s.data()[i];
        // Chain from depth space: D = 1/s, ∂L/∂s = −D²·∂L/∂D.
        let g = -grad_depth.data()[i] / (sv * sv);
        let mi = cfg.beta1 * m.data()[i] + (1.0 - cfg.beta1) * g;
        let vi = cfg.beta2 * v.data()[i] + (1.0 - cfg.beta2) * g * g;
        m.data_mut()[i] = mi;
        v.data_mut()[i] = vi;
        let step = cfg.learning_rate * (mi / bc1) / ((vi / bc2).sqrt() + cfg.epsilon);
        s.data_mut()[i] = (sv - step).clamp(min_s, max_s);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch index.
    pub epoch: usize,
    /// Left-right geometric loss at the start of the epoch.
    pub lr_loss: f64,
    pub temporal_loss: f64,
    /// Unweighted edge-loss sum.
    pub edge_loss: f64,
    /// Full objective including the edge weight.
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct RefineReport {
    /// One record per epoch, measured before that epoch's update.
    pub history: Vec<EpochRecord>,
    pub final_left: Vec<DepthMap>,
    pub final_right: Option<Vec<DepthMap>>,
    pub mask_coverage: Vec<(PairId, usize, usize)>,
    pub wall: Duration,
}

fn record(epoch: usize, report: &LossReport) -> EpochRecord {
    EpochRecord {
        epoch,
        lr_loss: report.geometric.lr_total,
        temporal_loss: report.geometric.temporal_total,
        edge_loss: report.edge_total,
        total: report.total,
    }
}

/// Runs the refinement loop. The edge-loss anchor is the bundle's initial
/// left depths, snapshotted before the first epoch and never updated.
pub fn refine(bundle: &VideoBundle, cfg: &RefinerConfig) -> Result<RefineReport> {
    let start = Instant::now();
    cfg.validate()?;
    bundle.validate()?;
    let sets = build_pair_sets(bundle.frame_count(), cfg.sampling)?;
    let pairs = prepare_pairs(bundle, &sets)?;
    let d0 = bundle.left_depths.clone();
    let mut params = Params::init(bundle, cfg);
    let mut adam = AdamState::zeros(&params);

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut mask_coverage = Vec::new();
    for epoch in 1..=cfg.epochs {
        let cur = params.materialize();
        let (report, grads) = evaluate(bundle, &pairs, &cur, &d0, cfg, epoch, true)?;
        let grads = grads.unwrap();
        history.push(record(epoch, &report));
        if epoch == 1 {
            mask_coverage = report.mask_coverage;
        }
        let (min_s, max_s) = (params.min_s, params.max_s);
        for i in 0..params.left.len() {
            adam_update(
                &mut params.left[i],
                &params.left_valid[i],
                &grads.left[i],
                &mut adam.m_left[i],
                &mut adam.v_left[i],
                cfg,
                epoch,
                min_s,
                max_s,
            );
        }
        if let (Some(right), Some(right_valid), Some(gr), Some(mr), Some(vr)) = (
            params.right.as_mut(),
            params.right_valid.as_ref(),
            grads.right.as_ref(),
            adam.m_right.as_mut(),
            adam.v_right.as_mut(),
        ) {
            for i in 0..right.len() {
                adam_update(
                    &mut right[i],
                    &right_valid[i],
                    &gr[i],
                    &mut mr[i],
                    &mut vr[i],
                    cfg,
                    epoch,
                    min_s,
                    max_s,
                );
            }
        }
    }

    let cur = params.materialize();
    Ok(RefineReport {
        history,
        final_left: cur.left,
        final_right: cur.right,
        mask_coverage,
        wall: start.elapsed(),
    })
}

/// Evaluates the full objective for the given depths without optimizing.
/// `d0` is the edge-loss anchor.
pub fn total_loss(
    bundle: &VideoBundle,
    cfg: &RefinerConfig,
    left: &[DepthMap],
    right: Option<&[DepthMap]>,
    d0: &[DepthMap],
) -> Result<LossReport> {
    cfg.validate()?;
    bundle.validate()?;
    if left.len() != bundle.frame_count() || d0.len() != bundle.frame_count() {
        return Err(Error::DimensionMismatch(format!(
            "{} depths and {} anchors for {} frames",
            left.len(),
            d0.len(),
            bundle.frame_count()
        )));
    }
    let sets = build_pair_sets(bundle.frame_count(), cfg.sampling)?;
    let pairs = prepare_pairs(bundle, &sets)?;
    let cur = Current {
        left: left.to_vec(),
        right: right.map(|r| r.to_vec()),
    };
    // Pairs were prepared against the bundle's own right-depth presence;
    // explicit None here drops the left-right terms.
    let pairs = if right.is_none() {
        pairs
            .into_iter()
            .filter(|p| p.id.kind == PairKind::Temporal)
            .collect()
    } else {
        pairs
    };
    evaluate(bundle, &pairs, &cur, d0, cfg, 0, false).map(|(report, _)| report)
}

/// The bundle's own initial depths evaluated as both current state and edge
/// anchor: the diagnostic view of a run before any optimization.
pub fn bundle_loss(bundle: &VideoBundle, cfg: &RefinerConfig) -> Result<LossReport> {
    total_loss(
        bundle,
        cfg,
        &bundle.left_depths,
        bundle.right_depths.as_deref(),
        &bundle.left_depths,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped: usize,
}

/// Central-difference validation of the assembled analytic gradient in
/// inverse-depth space. Pixels where a 2h-step quotient disagrees with the
/// h-step quotient are skipped: the loss is locally non-smooth there (L1
/// kinks, max/min ties, one-sided clamp boundaries).
pub fn gradient_check(bundle: &VideoBundle, cfg: &RefinerConfig, samples: usize) -> Result<GradientCheck> {
    cfg.validate()?;
    bundle.validate()?;
    let sets = build_pair_sets(bundle.frame_count(), cfg.sampling)?;
    let pairs = prepare_pairs(bundle, &sets)?;
    let d0 = bundle.left_depths.clone();
    let params = Params::init(bundle, cfg);
    let cur = params.materialize();
    let (_, grads) = evaluate(bundle, &pairs, &cur, &d0, cfg, 0, true)?;
    let grads = grads.unwrap();

    // Loss restricted to the terms that can read (frame, view); all other
    // terms cancel exactly inside a finite difference.
    let subset_loss = |cur: &Current, frame: usize, view: View| -> f64 {
        let mut sum = 0.0;
        for pair in &pairs {
            if pair.source != (frame, view) && pair.target != (frame, view) {
                continue;
            }
            let ctx = FramePairContext {
                id: pair.id,
                source_depth: cur.get(pair.source.0, pair.source.1),
                target_depth: cur.get(pair.target.0, pair.target.1),
                flow: pair.flow,
                mask: &pair.mask,
                source_to_target: pair.transform,
                intrinsics: bundle.rig.intrinsics,
            };
            sum += pair_loss(&ctx, &cfg.weights).combined;
        }
        if view == View::Left {
            sum += cfg.weights.w_edge
                * edge_loss(cfg.edge_kind, &d0[frame], &cur.left[frame], &cfg.edge).total;
        }
        sum
    };

    let mut candidates: Vec<(usize, View, usize, usize)> = Vec::new();
    for (i, valid) in params.left_valid.iter().enumerate() {
        for y in 0..valid.height() {
            for x in 0..valid.width() {
                if valid.at(x, y) {
                    candidates.push((i, View::Left, x, y));
                }
            }
        }
    }
    if let Some(right_valid) = &params.right_valid {
        for (i, valid) in right_valid.iter().enumerate() {
            for y in 0..valid.height() {
                for x in 0..valid.width() {
                    if valid.at(x, y) {
                        candidates.push((i, View::Right, x, y));
                    }
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    candidates.shuffle(&mut rng);

    let mut max_rel_err: f64 = 0.0;
    let mut checked = 0usize;
    let mut skipped = 0usize;
    let mut cur = cur;
    for (frame, view, x, y) in candidates {
        if checked >= samples {
            break;
        }
        let s0 = match view {
            View::Left => params.left[frame].at(x, y),
            View::Right => params.right.as_ref().unwrap()[frame].at(x, y),
        };
        let d_cur = 1.0 / s0;
        let analytic_depth = match view {
            View::Left => grads.left[frame].at(x, y),
            View::Right => grads.right.as_ref().unwrap()[frame].at(x, y),
        };
        let analytic = -analytic_depth * d_cur * d_cur;

        let h = 1e-5 * s0;
        let mut eval_at = |s: f64| -> f64 {
            let map = match view {
                View::Left => &mut cur.left[frame],
                View::Right => &mut cur.right.as_mut().unwrap()[frame],
            };
            map.set(x, y, 1.0 / s);
            subset_loss(&cur, frame, view)
        };
        let lp = eval_at(s0 + h);
        let lm = eval_at(s0 - h);
        let lp2 = eval_at(s0 + 2.0 * h);
        let lm2 = eval_at(s0 - 2.0 * h);
        // Restore before the next candidate.
        eval_at(s0);
        let fd = (lp - lm) / (2.0 * h);
        let fd2 = (lp2 - lm2) / (4.0 * h);
        if (fd - fd2).abs() > 1e-3 * fd.abs().max(fd2.abs()).max(1e-6) {
            skipped += 1;
            continue;
        }
        checked += 1;
        let denom = analytic.abs().max(fd.abs());
        if denom < 1e-9 {
            continue;
        }
        max_rel_err = max_rel_err.max((analytic - fd).abs() / denom);
    }
    Ok(GradientCheck {
        max_rel_err,
        checked,
        skipped,
    })
}
