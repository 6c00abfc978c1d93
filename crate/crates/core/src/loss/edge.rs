//! Edge-aware losses: scale-invariant and ratio gradients, per-scale edge
//! masks anchored on the initial depth map, the multi-scale gradient loss,
//! and the contrastive loss, with analytic gradients.

use crate::error::{Error, Result};
use crate::grid::{DepthMap, Grid};

/// Which edge loss the refiner adds to the geometric term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeLossKind {
    None,
    Multiscale,
    Contrastive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeLossConfig {
    /// Gradient offsets h, ascending.
    pub scales: Vec<usize>,
    /// Base threshold of the scale-invariant edge mask; per scale the
    /// threshold is α·2^(h−1).
    pub alpha: f64,
    /// Base threshold of the ratio edge mask; per scale 1.05·2^(h−1) by
    /// default.
    pub ratio_base: f64,
    /// Penalize ratios above the threshold too (the literal squared form).
    /// Default keeps only the one-sided "edge must remain present" penalty.
    pub two_sided: bool,
}

impl Default for EdgeLossConfig {
    fn default() -> Self {
        EdgeLossConfig {
            scales: vec![1, 2, 4, 6, 8],
            alpha: 0.02,
            ratio_base: 1.05,
            two_sided: false,
        }
    }
}

impl EdgeLossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() {
            return Err(Error::InvalidConfig("edge scales must not be empty".into()));
        }
        if self.scales[0] < 1 || self.scales.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(format!(
                "edge scales must be ascending and >= 1, got {:?}",
                self.scales
            )));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(self.ratio_base.is_finite() && self.ratio_base > 1.0) {
            return Err(Error::InvalidConfig(format!(
                "ratio base must exceed 1, got {}",
                self.ratio_base
            )));
        }
        Ok(())
    }

    /// α_h = α·2^(h−1).
    pub fn si_threshold(&self, h: usize) -> f64 {
        self.alpha * 2f64.powi(h as i32 - 1)
    }

    /// Ratio-edge threshold 1.05·2^(h−1) at the default base.
    pub fn ratio_threshold(&self, h: usize) -> f64 {
        self.ratio_base * 2f64.powi(h as i32 - 1)
    }
}

/// Scale-invariant gradient component between values b (center) and a
/// (h-offset neighbor): (a − b)/(|a| + |b|); 0 when the neighbor is missing
/// or both values are 0.
fn si_component(a: Option<f64>, b: Option<f64>) -> f64 {
    match (a, b) {
        (Some(a), Some(b)) => {
            let denom = a.abs() + b.abs();
            if denom == 0.0 {
                0.0
            } else {
                (a - b) / denom
            }
        }
        _ => 0.0,
    }
}

/// Ratio gradient component max(a, b)/min(a, b); 1 (no edge) when either
/// value is missing or non-positive.
fn ratio_component(a: Option<f64>, b: Option<f64>) -> f64 {
    match (a, b) {
        (Some(a), Some(b)) if a > 0.0 && b > 0.0 => {
            if a >= b {
                a / b
            } else {
                b / a
            }
        }
        _ => 1.0,
    }
}

fn neighbor_h(map: &DepthMap, x: usize, y: usize, h: usize) -> Option<f64> {
    (x + h < map.width()).then(|| map.get(x + h, y)).flatten()
}

fn neighbor_v(map: &DepthMap, x: usize, y: usize, h: usize) -> Option<f64> {
    (y + h < map.height()).then(|| map.get(x, y + h)).flatten()
}

/// Per-pixel gradient components at one scale.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub scale: usize,
    data: Grid<[f64; 2]>,
}

impl GradientField {
    pub fn at(&self, x: usize, y: usize) -> [f64; 2] {
        self.data.at(x, y)
    }

    pub fn grid(&self) -> &Grid<[f64; 2]> {
        &self.data
    }
}

/// Scale-invariant gradient g_h: normalized differences toward the +h
/// horizontal and vertical neighbors. Components lie in [−1, 1].
pub fn si_gradient(map: &DepthMap, h: usize) -> GradientField {
    assert!(h >= 1, "gradient scale must be >= 1");
    let mut data = Grid::new(map.width(), map.height(), [0.0, 0.0]);
    for y in 0..map.height() {
        for x in 0..map.width() {
            let center = map.get(x, y);
            data.set(
                x,
                y,
                [
                    si_component(neighbor_h(map, x, y, h), center),
                    si_component(neighbor_v(map, x, y, h), center),
                ],
            );
        }
    }
    GradientField { scale: h, data }
}

/// Ratio gradient g^r_h: max/min of each h-neighbor pair; components are
/// >= 1, with 1 at out-of-bounds or invalid neighbors.
pub fn ratio_gradient(map: &DepthMap, h: usize) -> GradientField {
    assert!(h >= 1, "gradient scale must be >= 1");
    let mut data = Grid::new(map.width(), map.height(), [1.0, 1.0]);
    for y in 0..map.height() {
        for x in 0..map.width() {
            let center = map.get(x, y);
            data.set(
                x,
                y,
                [
                    ratio_component(neighbor_h(map, x, y, h), center),
                    ratio_component(neighbor_v(map, x, y, h), center),
                ],
            );
        }
    }
    GradientField { scale: h, data }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeMaskKind {
    ScaleInvariant,
    Ratio,
}

/// Boolean edge membership at one scale, computed from the initial depth.
/// Pixels whose h-offset neighbors are out of bounds or invalid are false.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMask {
    pub scale: usize,
    pub threshold: f64,
    data: Grid<bool>,
}

impl EdgeMask {
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data.at(x, y)
    }

    pub fn grid(&self) -> &Grid<bool> {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.data().iter().filter(|v| **v).count()
    }
}

/// Threshold test at one scale: ∞-norm of the scale-invariant gradient
/// against α·2^(h−1), or either ratio component against the ratio
/// threshold.
pub fn edge_mask(d0: &DepthMap, h: usize, cfg: &EdgeLossConfig, kind: EdgeMaskKind) -> EdgeMask {
    let threshold = match kind {
        EdgeMaskKind::ScaleInvariant => cfg.si_threshold(h),
        EdgeMaskKind::Ratio => cfg.ratio_threshold(h),
    };
    let mut data = Grid::new(d0.width(), d0.height(), false);
    for y in 0..d0.height() {
        for x in 0..d0.width() {
            let center = d0.get(x, y);
            let (right, down) = (neighbor_h(d0, x, y, h), neighbor_v(d0, x, y, h));
            if center.is_none() || right.is_none() || down.is_none() {
                continue;
            }
            let hit = match kind {
                EdgeMaskKind::ScaleInvariant => {
                    let gu = si_component(right, center);
                    let gv = si_component(down, center);
                    gu.abs().max(gv.abs()) > threshold
                }
                EdgeMaskKind::Ratio => {
                    ratio_component(right, center) > threshold
                        || ratio_component(down, center) > threshold
                }
            };
            data.set(x, y, hit);
        }
    }
    EdgeMask {
        scale: h,
        threshold,
        data,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleReport {
    pub scale: usize,
    pub value: f64,
    /// Masked pixels (multi-scale) or masked components (contrastive).
    pub active: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EdgeLossReport {
    pub per_scale: Vec<ScaleReport>,
    pub total: f64,
}

/// Multi-scale gradient loss: per scale, the mean over masked pixels of
/// ‖g_h[D0] − g_h[D_cur]‖₂; scales are summed. Masks come from D0 only.
pub fn multiscale_gradient_loss(
    d0: &DepthMap,
    d_cur: &DepthMap,
    cfg: &EdgeLossConfig,
) -> EdgeLossReport {
    let (report, _) = multiscale_inner(d0, d_cur, cfg, false);
    report
}

/// Contrastive loss: per D0-masked component, (α_h − g^r_h[D_cur])² when the
/// current ratio falls below the threshold (both sides when two_sided);
/// normalized by the full pixel count H·W per Eq. 14 and summed over scales.
pub fn contrastive_loss(d0: &DepthMap, d_cur: &DepthMap, cfg: &EdgeLossConfig) -> EdgeLossReport {
    let (report, _) = contrastive_inner(d0, d_cur, cfg, false);
    report
}

/// Dispatches on the configured kind; None yields an empty report.
pub fn edge_loss(
    kind: EdgeLossKind,
    d0: &DepthMap,
    d_cur: &DepthMap,
    cfg: &EdgeLossConfig,
) -> EdgeLossReport {
    match kind {
        EdgeLossKind::None => EdgeLossReport::default(),
        EdgeLossKind::Multiscale => multiscale_gradient_loss(d0, d_cur, cfg),
        EdgeLossKind::Contrastive => contrastive_loss(d0, d_cur, cfg),
    }
}

/// Loss plus analytic ∂L/∂D_cur. Masks are constants of D0; max/min
/// branches differentiate through the branch taken, ties through the first
/// argument (derivative 0).
pub fn edge_loss_gradient(
    kind: EdgeLossKind,
    d0: &DepthMap,
    d_cur: &DepthMap,
    cfg: &EdgeLossConfig,
) -> (EdgeLossReport, Grid<f64>) {
    match kind {
        EdgeLossKind::None => (
            EdgeLossReport::default(),
            Grid::zeros(d_cur.width(), d_cur.height()),
        ),
        EdgeLossKind::Multiscale => {
            let (report, grad) = multiscale_inner(d0, d_cur, cfg, true);
            (report, grad.unwrap())
        }
        EdgeLossKind::Contrastive => {
            let (report, grad) = contrastive_inner(d0, d_cur, cfg, true);
            (report, grad.unwrap())
        }
    }
}

fn assert_same_size(d0: &DepthMap, d_cur: &DepthMap) {
    assert!(
        d0.width() == d_cur.width() && d0.height() == d_cur.height(),
        "depth maps must share dimensions"
    );
}

fn multiscale_inner(
    d0: &DepthMap,
    d_cur: &DepthMap,
    cfg: &EdgeLossConfig,
    with_grad: bool,
) -> (EdgeLossReport, Option<Grid<f64>>) {
    assert_same_size(d0, d_cur);
    let mut report = EdgeLossReport::default();
    let mut grad = with_grad.then(|| Grid::zeros(d_cur.width(), d_cur.height()));

    for &h in &cfg.scales {
        let mask = edge_mask(d0, h, cfg, EdgeMaskKind::ScaleInvariant);
        // The per-scale mean needs the contributing count before gradient
        // weights can be applied, so pixels are gathered first.
        let mut terms: Vec<(usize, usize)> = Vec::new();
        for y in 0..d0.height() {
            for x in 0..d0.width() {
                if !mask.get(x, y) {
                    continue;
                }
                let (center, right, down) = (
                    d_cur.get(x, y),
                    neighbor_h(d_cur, x, y, h),
                    neighbor_v(d_cur, x, y, h),
                );
                if center.is_none() || right.is_none() || down.is_none() {
                    continue;
                }
                terms.push((x, y));
            }
        }
        if terms.is_empty() {
            report.per_scale.push(ScaleReport {
                scale: h,
                value: 0.0,
                active: 0,
            });
            continue;
        }
        let inv_n = 1.0 / terms.len() as f64;
        let mut sum = 0.0;
        for &(x, y) in &terms {
            let c0 = d0.get(x, y);
            let g0 = [
                si_component(neighbor_h(d0, x, y, h), c0),
                si_component(neighbor_v(d0, x, y, h), c0),
            ];
            let b = d_cur.get(x, y).unwrap();
            let nbs = [neighbor_h(d_cur, x, y, h), neighbor_v(d_cur, x, y, h)];
            let g = [
                si_component(nbs[0], Some(b)),
                si_component(nbs[1], Some(b)),
            ];
            let diff = [g0[0] - g[0], g0[1] - g[1]];
            let norm = (diff[0] * diff[0] + diff[1] * diff[1]).sqrt();
            sum += norm;

            if let Some(grad) = grad.as_mut() {
                // Norms at rounding scale are the kink of ‖·‖₂ reached
                // through 1/(1/d) round trips; the direction Δ/‖Δ‖ would be
                // floating-point noise, so the subgradient is zero there.
                if norm > 1e-12 {
                    for (ci, (nb_pos, a)) in [(x + h, y), (x, y + h)].into_iter().zip(nbs).enumerate()
                    {
                        let a = a.unwrap();
                        let s = a.abs() + b.abs();
                        if s == 0.0 {
                            continue;
                        }
                        // ∂‖Δ‖/∂g_c = −Δ_c/‖Δ‖; then ∂g/∂a = 2b/s²,
                        // ∂g/∂b = −2a/s² for positive depths.
                        let coeff = -diff[ci] / norm * inv_n;
                        let (nx, ny) = nb_pos;
                        grad.set(nx, ny, grad.at(nx, ny) + coeff * 2.0 * b / (s * s));
                        grad.set(x, y, grad.at(x, y) - coeff * 2.0 * a / (s * s));
                    }
                }
            }
        }
        report.per_scale.push(ScaleReport {
            scale: h,
            value: sum * inv_n,
            active: terms.len(),
        });
    }
    report.total = report.per_scale.iter().map(|s| s.value).sum();
    (report, grad)
}

fn contrastive_inner(
    d0: &DepthMap,
    d_cur: &DepthMap,
    cfg: &EdgeLossConfig,
    with_grad: bool,
) -> (EdgeLossReport, Option<Grid<f64>>) {
    assert_same_size(d0, d_cur);
    let mut report = EdgeLossReport::default();
    let mut grad = with_grad.then(|| Grid::zeros(d_cur.width(), d_cur.height()));
    let inv_area = 1.0 / (d0.width() * d0.height()) as f64;

    for &h in &cfg.scales {
        let thr = cfg.ratio_threshold(h);
        let mut sum = 0.0;
        let mut active = 0usize;
        for y in 0..d0.height() {
            for x in 0..d0.width() {
                let c0 = d0.get(x, y);
                for (nb0, nb_cur, nb_pos) in [
                    (neighbor_h(d0, x, y, h), neighbor_h(d_cur, x, y, h), (x + h, y)),
                    (neighbor_v(d0, x, y, h), neighbor_v(d_cur, x, y, h), (x, y + h)),
                ] {
                    if ratio_component(nb0, c0) <= thr {
                        continue;
                    }
                    active += 1;
                    let (Some(a), Some(b)) = (nb_cur, d_cur.get(x, y)) else {
                        continue;
                    };
                    // Branch of max/min; ties resolve to the first argument
                    // on both, making the derivative vanish.
                    let (g, dg_da, dg_db) = if a > b {
                        (a / b, 1.0 / b, -a / (b * b))
                    } else if a < b {
                        (b / a, -b / (a * a), 1.0 / a)
                    } else {
                        (1.0, 0.0, 0.0)
                    };
                    if !cfg.two_sided && g >= thr {
                        continue;
                    }
                    let gap = thr - g;
                    sum += gap * gap;
                    if let Some(grad) = grad.as_mut() {
                        let dpen = 2.0 * (g - thr) * inv_area;
                        let (nx, ny) = nb_pos;
                        grad.set(nx, ny, grad.at(nx, ny) + dpen * dg_da);
                        grad.set(x, y, grad.at(x, y) + dpen * dg_db);
                    }
                }
            }
        }
        report.per_scale.push(ScaleReport {
            scale: h,
            value: sum * inv_area,
            active,
        });
    }
    report.total = report.per_scale.iter().map(|s| s.value).sum();
    (report, grad)
}
