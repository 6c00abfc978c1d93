//! Run and scene manifests: plain-text `key = value` sections describing a
//! directory of depth, image, flow, and pose files plus the refiner
//! configuration. Validation is exhaustive; every problem is reported in
//! one pass.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::bundle::{FlowPair, VideoBundle};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, StereoRig};
use crate::io::flo::read_flo;
use crate::io::pfm::{read_pfm, read_pfm_depth};
use crate::io::png16::read_png16_depth;
use crate::io::poses::read_kitti_poses;
use crate::loss::edge::EdgeLossKind;
use crate::refine::{build_pair_sets, RefinerConfig, Sampling};

pub const DEFAULT_PNG_SCALE: f64 = 1.0 / 256.0;

/// Flow file templates; `{i}` and `{j}` expand to the pair indices.
#[derive(Debug, Clone, PartialEq)]
pub struct PairTemplates {
    pub lr_forward: Option<String>,
    pub lr_backward: Option<String>,
    pub t_forward: String,
    pub t_backward: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    /// Directory all templates resolve against (the manifest's own).
    pub root: PathBuf,
    pub rig: StereoRig,
    pub frames: usize,
    pub left_depth: String,
    pub right_depth: Option<String>,
    pub left_image: Option<String>,
    pub right_image: Option<String>,
    pub trajectory: Option<String>,
    /// Meters per raw unit for `.png` depth templates.
    pub png_scale: f64,
    pub pairs: Option<PairTemplates>,
    pub refiner: RefinerConfig,
    pub fb_threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneManifest {
    pub preset: String,
    pub seed: u64,
    pub frames: Option<usize>,
    /// Degradations applied to the working depths (ground truth stays
    /// untouched): multiplicative log-normal noise, Gaussian blur, uniform
    /// rescale, in blur → noise → scale order.
    pub noise_sigma: f64,
    pub blur_radius: f64,
    pub depth_scale: f64,
    /// Seed for the degradation draws; defaults to the scene seed.
    pub perturb_seed: Option<u64>,
}

/// Fills the `{i}` (and `{j}`, when given) placeholders of a file template.
pub fn expand_template(template: &str, i: usize, j: Option<usize>) -> String {
    let mut s = template.replace("{i}", &i.to_string());
    if let Some(j) = j {
        s = s.replace("{j}", &j.to_string());
    }
    s
}

/// Raw `[section] key = value` entries with line numbers.
struct RawManifest {
    entries: Vec<(String, String, String, usize)>,
}

impl RawManifest {
    fn parse(text: &str, problems: &mut Vec<String>) -> RawManifest {
        let mut entries = Vec::new();
        let mut section = String::new();
        let mut seen = BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let lineno = lineno + 1;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            match line.split_once('=') {
                Some((k, v)) => {
                    let key = k.trim().to_string();
                    if section.is_empty() {
                        problems.push(format!("line {lineno}: key {key:?} before any section"));
                        continue;
                    }
                    if !seen.insert((section.clone(), key.clone())) {
                        problems.push(format!("line {lineno}: duplicate key [{section}] {key}"));
                        continue;
                    }
                    entries.push((section.clone(), key, v.trim().to_string(), lineno));
                }
                None => problems.push(format!("line {lineno}: expected `key = value`, got {line:?}")),
            }
        }
        RawManifest { entries }
    }

    fn take(&mut self, section: &str, key: &str) -> Option<String> {
        let idx = self
            .entries
            .iter()
            .position(|(s, k, _, _)| s == section && k == key)?;
        Some(self.entries.remove(idx).2)
    }

    /// Everything not claimed by `take` is an unknown key.
    fn report_leftovers(&self, problems: &mut Vec<String>) {
        for (section, key, _, lineno) in &self.entries {
            problems.push(format!("line {lineno}: unknown key {key:?} in [{section}]"));
        }
    }
}

fn parse_num<T: std::str::FromStr>(
    raw: Option<String>,
    what: &str,
    problems: &mut Vec<String>,
) -> Option<T> {
    let raw = raw?;
    match raw.parse() {
        Ok(v) => Some(v),
        Err(_) => {
            problems.push(format!("{what}: cannot parse {raw:?}"));
            None
        }
    }
}

fn required<T>(value: Option<T>, what: &str, problems: &mut Vec<String>) -> Option<T> {
    if value.is_none() {
        problems.push(format!("{what} is required"));
    }
    value
}

fn parse_edge_kind(raw: &str) -> Option<EdgeLossKind> {
    match raw {
        "none" => Some(EdgeLossKind::None),
        "ms" => Some(EdgeLossKind::Multiscale),
        "contrastive" => Some(EdgeLossKind::Contrastive),
        _ => None,
    }
}

pub fn edge_kind_name(kind: EdgeLossKind) -> &'static str {
    match kind {
        EdgeLossKind::None => "none",
        EdgeLossKind::Multiscale => "ms",
        EdgeLossKind::Contrastive => "contrastive",
    }
}

fn parse_sampling(raw: &str) -> Option<Sampling> {
    match raw {
        "consecutive" => Some(Sampling::Consecutive),
        "hierarchical" => Some(Sampling::Hierarchical),
        _ => None,
    }
}

pub fn sampling_name(sampling: Sampling) -> &'static str {
    match sampling {
        Sampling::Consecutive => "consecutive",
        Sampling::Hierarchical => "hierarchical",
    }
}

/// Applies `[refiner]` and `[edge]` entries on top of the defaults. Shared
/// with the CLI, whose flag overrides run after this.
fn apply_refiner_keys(raw: &mut RawManifest, problems: &mut Vec<String>) -> RefinerConfig {
    let mut cfg = RefinerConfig::default();
    if let Some(v) = parse_num(raw.take("refiner", "epochs"), "[refiner] epochs", problems) {
        cfg.epochs = v;
    }
    if let Some(v) = parse_num(
        raw.take("refiner", "learning_rate"),
        "[refiner] learning_rate",
        problems,
    ) {
        cfg.learning_rate = v;
    }
    if let Some(v) = parse_num(raw.take("refiner", "lambda"), "[refiner] lambda", problems) {
        cfg.weights.lambda = v;
    }
    if let Some(v) = parse_num(raw.take("refiner", "w_edge"), "[refiner] w_edge", problems) {
        cfg.weights.w_edge = v;
    }
    if let Some(v) = parse_num(raw.take("refiner", "seed"), "[refiner] seed", problems) {
        cfg.seed = v;
    }
    if let Some(v) = parse_num(
        raw.take("refiner", "min_depth"),
        "[refiner] min_depth",
        problems,
    ) {
        cfg.min_depth = v;
    }
    if let Some(v) = parse_num(
        raw.take("refiner", "max_depth"),
        "[refiner] max_depth",
        problems,
    ) {
        cfg.max_depth = v;
    }
    if let Some(s) = raw.take("refiner", "edge") {
        match parse_edge_kind(&s) {
            Some(k) => cfg.edge_kind = k,
            None => problems.push(format!(
                "[refiner] edge: {s:?} is not one of none, ms, contrastive"
            )),
        }
    }
    if let Some(s) = raw.take("refiner", "sampling") {
        match parse_sampling(&s) {
            Some(k) => cfg.sampling = k,
            None => problems.push(format!(
                "[refiner] sampling: {s:?} is not consecutive or hierarchical"
            )),
        }
    }
    if let Some(s) = raw.take("edge", "scales") {
        let mut scales = Vec::new();
        let mut ok = true;
        for part in s.split(',') {
            match part.trim().parse::<usize>() {
                Ok(v) => scales.push(v),
                Err(_) => {
                    problems.push(format!("[edge] scales: cannot parse {part:?}"));
                    ok = false;
                }
            }
        }
        if ok {
            cfg.edge.scales = scales;
        }
    }
    if let Some(v) = parse_num(raw.take("edge", "alpha"), "[edge] alpha", problems) {
        cfg.edge.alpha = v;
    }
    if let Some(v) = parse_num(raw.take("edge", "ratio_base"), "[edge] ratio_base", problems) {
        cfg.edge.ratio_base = v;
    }
    if let Some(s) = raw.take("edge", "two_sided") {
        match s.as_str() {
            "true" => cfg.edge.two_sided = true,
            "false" => cfg.edge.two_sided = false,
            _ => problems.push(format!("[edge] two_sided: {s:?} is not true or false")),
        }
    }
    cfg
}

/// Parses and validates a run manifest: syntax, unknown keys, required
/// keys, config sanity, and existence of every referenced file, reporting
/// every problem at once.
pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::format(path, format!("not readable as text: {e}")))?;
    let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut problems = Vec::new();
    let mut raw = RawManifest::parse(&text, &mut problems);

    let fx: Option<f64> = parse_num(raw.take("rig", "fx"), "[rig] fx", &mut problems);
    let fy: Option<f64> = parse_num(raw.take("rig", "fy"), "[rig] fy", &mut problems);
    let cx: Option<f64> = parse_num(raw.take("rig", "cx"), "[rig] cx", &mut problems);
    let cy: Option<f64> = parse_num(raw.take("rig", "cy"), "[rig] cy", &mut problems);
    let width: Option<usize> = parse_num(raw.take("rig", "width"), "[rig] width", &mut problems);
    let height: Option<usize> = parse_num(raw.take("rig", "height"), "[rig] height", &mut problems);
    let baseline: Option<f64> =
        parse_num(raw.take("rig", "baseline"), "[rig] baseline", &mut problems);
    let rig = match (
        required(fx, "[rig] fx", &mut problems),
        required(fy, "[rig] fy", &mut problems),
        required(cx, "[rig] cx", &mut problems),
        required(cy, "[rig] cy", &mut problems),
        required(width, "[rig] width", &mut problems),
        required(height, "[rig] height", &mut problems),
        required(baseline, "[rig] baseline", &mut problems),
    ) {
        (Some(fx), Some(fy), Some(cx), Some(cy), Some(w), Some(h), Some(b)) => {
            match CameraIntrinsics::new(fx, fy, cx, cy, w, h).and_then(|k| StereoRig::new(k, b)) {
                Ok(rig) => Some(rig),
                Err(e) => {
                    problems.push(format!("[rig]: {e}"));
                    None
                }
            }
        }
        _ => None,
    };

    let frames: Option<usize> = required(
        parse_num(raw.take("frames", "count"), "[frames] count", &mut problems),
        "[frames] count",
        &mut problems,
    );
    let left_depth = required(
        raw.take("frames", "left_depth"),
        "[frames] left_depth",
        &mut problems,
    );
    let right_depth = raw.take("frames", "right_depth");
    let left_image = raw.take("frames", "left_image");
    let right_image = raw.take("frames", "right_image");
    let trajectory = raw.take("frames", "trajectory");
    let png_scale = parse_num(
        raw.take("frames", "png_scale"),
        "[frames] png_scale",
        &mut problems,
    )
    .unwrap_or(DEFAULT_PNG_SCALE);

    let lr_forward = raw.take("pairs", "lr_forward");
    let lr_backward = raw.take("pairs", "lr_backward");
    let t_forward = raw.take("pairs", "t_forward");
    let t_backward = raw.take("pairs", "t_backward");
    let pairs = match (&t_forward, &t_backward, &lr_forward, &lr_backward) {
        (None, None, None, None) => None,
        _ => {
            if lr_forward.is_some() != lr_backward.is_some() {
                problems
                    .push("[pairs] lr_forward and lr_backward must be given together".to_string());
            }
            match (
                required(t_forward, "[pairs] t_forward", &mut problems),
                required(t_backward, "[pairs] t_backward", &mut problems),
            ) {
                (Some(tf), Some(tb)) => Some(PairTemplates {
                    lr_forward,
                    lr_backward,
                    t_forward: tf,
                    t_backward: tb,
                }),
                _ => None,
            }
        }
    };

    let refiner = apply_refiner_keys(&mut raw, &mut problems);
    let mut fb_threshold = crate::flow::DEFAULT_FB_THRESHOLD;
    if let Some(v) = parse_num(
        raw.take("flow", "fb_threshold"),
        "[flow] fb_threshold",
        &mut problems,
    ) {
        if v > 0.0 {
            fb_threshold = v;
        } else {
            problems.push(format!("[flow] fb_threshold must be positive, got {v}"));
        }
    }

    raw.report_leftovers(&mut problems);

    if let Err(e) = refiner.validate() {
        problems.push(format!("[refiner]/[edge]: {e}"));
    }

    let manifest = match (rig, frames, left_depth) {
        (Some(rig), Some(frames), Some(left_depth)) if problems.is_empty() => RunManifest {
            root,
            rig,
            frames,
            left_depth,
            right_depth,
            left_image,
            right_image,
            trajectory,
            png_scale,
            pairs,
            refiner,
            fb_threshold,
        },
        _ => {
            return Err(Error::ManifestInvalid {
                path: path.to_path_buf(),
                problems,
            })
        }
    };

    let mut problems = Vec::new();
    check_files(&manifest, &mut problems);
    if !problems.is_empty() {
        return Err(Error::ManifestInvalid {
            path: path.to_path_buf(),
            problems,
        });
    }
    Ok(manifest)
}

/// Existence pass over every file the manifest references.
fn check_files(mf: &RunManifest, problems: &mut Vec<String>) {
    let mut check = |rel: String| {
        let p = mf.root.join(&rel);
        if !p.is_file() {
            problems.push(format!("missing file {rel}"));
        }
    };
    for i in 0..mf.frames {
        check(expand_template(&mf.left_depth, i, None));
        if let Some(t) = &mf.right_depth {
            check(expand_template(t, i, None));
        }
        if let Some(t) = &mf.left_image {
            check(expand_template(t, i, None));
        }
        if let Some(t) = &mf.right_image {
            check(expand_template(t, i, None));
        }
    }
    if let Some(t) = &mf.trajectory {
        check(t.clone());
    }
    if let Some(pairs) = &mf.pairs {
        if let Ok(sets) = build_pair_sets(mf.frames, mf.refiner.sampling) {
            if let (Some(f), Some(b)) = (&pairs.lr_forward, &pairs.lr_backward) {
                for &i in &sets.lr {
                    check(expand_template(f, i, None));
                    check(expand_template(b, i, None));
                }
            }
            for &(i, j) in &sets.temporal {
                check(expand_template(&pairs.t_forward, i, Some(j)));
                check(expand_template(&pairs.t_backward, i, Some(j)));
            }
        }
    }
}

/// Reads a depth map dispatching on the extension: `.pfm` lossless float,
/// `.png` 16-bit quantized at `png_scale` meters per unit.
pub fn read_depth_auto(root: &Path, rel: &str, png_scale: f64) -> Result<crate::grid::DepthMap> {
    let path = root.join(rel);
    match path.extension().and_then(|e| e.to_str()) {
        Some("pfm") => read_pfm_depth(&path),
        Some("png") => read_png16_depth(&path, png_scale),
        _ => Err(Error::format(
            &path,
            "unsupported depth extension, expected .pfm or .png",
        )),
    }
}

/// Reads every referenced file and assembles a validated bundle. Needs the
/// pair templates and the trajectory.
pub fn load_bundle(mf: &RunManifest) -> Result<VideoBundle> {
    let pairs = mf.pairs.as_ref().ok_or_else(|| {
        Error::InvalidConfig("manifest has no [pairs] section to build a bundle from".into())
    })?;
    let traj_rel = mf.trajectory.as_ref().ok_or_else(|| {
        Error::InvalidConfig("manifest has no trajectory to build a bundle from".into())
    })?;
    let (trajectory, _) = read_kitti_poses(&mf.root.join(traj_rel))?;
    if trajectory.len() != mf.frames {
        return Err(Error::InvalidConfig(format!(
            "trajectory has {} poses for {} frames",
            trajectory.len(),
            mf.frames
        )));
    }
    let mut bundle = VideoBundle::new(mf.rig, trajectory);
    bundle.fb_threshold = mf.fb_threshold;
    for i in 0..mf.frames {
        bundle
            .left_depths
            .push(read_depth_auto(&mf.root, &expand_template(&mf.left_depth, i, None), mf.png_scale)?);
    }
    if let Some(t) = &mf.right_depth {
        let mut v = Vec::with_capacity(mf.frames);
        for i in 0..mf.frames {
            v.push(read_depth_auto(&mf.root, &expand_template(t, i, None), mf.png_scale)?);
        }
        bundle.right_depths = Some(v);
    }
    for (slot, t) in [
        (&mut bundle.left_images, &mf.left_image),
        (&mut bundle.right_images, &mf.right_image),
    ] {
        if let Some(t) = t {
            let mut v = Vec::with_capacity(mf.frames);
            for i in 0..mf.frames {
                v.push(read_pfm(&mf.root.join(expand_template(t, i, None)))?);
            }
            *slot = Some(v);
        }
    }
    let sets = build_pair_sets(mf.frames, mf.refiner.sampling)?;
    if let (Some(f), Some(b)) = (&pairs.lr_forward, &pairs.lr_backward) {
        for &i in &sets.lr {
            bundle.lr_flows.insert(
                i,
                FlowPair {
                    forward: read_flo(&mf.root.join(expand_template(f, i, None)))?,
                    backward: read_flo(&mf.root.join(expand_template(b, i, None)))?,
                },
            );
        }
    }
    for &(i, j) in &sets.temporal {
        bundle.t_flows.insert(
            (i, j),
            FlowPair {
                forward: read_flo(&mf.root.join(expand_template(&pairs.t_forward, i, Some(j))))?,
                backward: read_flo(&mf.root.join(expand_template(&pairs.t_backward, i, Some(j))))?,
            },
        );
    }
    bundle.validate()?;
    Ok(bundle)
}

/// Canonical emission; `read_manifest` on the output reproduces the value.
pub fn write_manifest(path: &Path, mf: &RunManifest) -> Result<()> {
    let mut s = String::new();
    let k = &mf.rig.intrinsics;
    let _ = writeln!(s, "[rig]");
    let _ = writeln!(s, "fx = {}", k.fx);
    let _ = writeln!(s, "fy = {}", k.fy);
    let _ = writeln!(s, "cx = {}", k.cx);
    let _ = writeln!(s, "cy = {}", k.cy);
    let _ = writeln!(s, "width = {}", k.width);
    let _ = writeln!(s, "height = {}", k.height);
    let _ = writeln!(s, "baseline = {}", mf.rig.baseline);
    let _ = writeln!(s, "\n[frames]");
    let _ = writeln!(s, "count = {}", mf.frames);
    let _ = writeln!(s, "left_depth = {}", mf.left_depth);
    if let Some(t) = &mf.right_depth {
        let _ = writeln!(s, "right_depth = {t}");
    }
    if let Some(t) = &mf.left_image {
        let _ = writeln!(s, "left_image = {t}");
    }
    if let Some(t) = &mf.right_image {
        let _ = writeln!(s, "right_image = {t}");
    }
    if let Some(t) = &mf.trajectory {
        let _ = writeln!(s, "trajectory = {t}");
    }
    if mf.png_scale != DEFAULT_PNG_SCALE {
        let _ = writeln!(s, "png_scale = {}", mf.png_scale);
    }
    if let Some(p) = &mf.pairs {
        let _ = writeln!(s, "\n[pairs]");
        if let Some(t) = &p.lr_forward {
            let _ = writeln!(s, "lr_forward = {t}");
        }
        if let Some(t) = &p.lr_backward {
            let _ = writeln!(s, "lr_backward = {t}");
        }
        let _ = writeln!(s, "t_forward = {}", p.t_forward);
        let _ = writeln!(s, "t_backward = {}", p.t_backward);
    }
    let _ = writeln!(s, "\n[flow]");
    let _ = writeln!(s, "fb_threshold = {}", mf.fb_threshold);
    let r = &mf.refiner;
    let _ = writeln!(s, "\n[refiner]");
    let _ = writeln!(s, "epochs = {}", r.epochs);
    let _ = writeln!(s, "learning_rate = {}", r.learning_rate);
    let _ = writeln!(s, "lambda = {}", r.weights.lambda);
    let _ = writeln!(s, "w_edge = {}", r.weights.w_edge);
    let _ = writeln!(s, "edge = {}", edge_kind_name(r.edge_kind));
    let _ = writeln!(s, "sampling = {}", sampling_name(r.sampling));
    let _ = writeln!(s, "seed = {}", r.seed);
    let _ = writeln!(s, "min_depth = {}", r.min_depth);
    let _ = writeln!(s, "max_depth = {}", r.max_depth);
    let _ = writeln!(s, "\n[edge]");
    let scales: Vec<String> = r.edge.scales.iter().map(|v| v.to_string()).collect();
    let _ = writeln!(s, "scales = {}", scales.join(","));
    let _ = writeln!(s, "alpha = {}", r.edge.alpha);
    let _ = writeln!(s, "ratio_base = {}", r.edge.ratio_base);
    let _ = writeln!(s, "two_sided = {}", r.edge.two_sided);
    fs::write(path, s)?;
    Ok(())
}

/// `[scene]` manifest for the synthesizer: preset name, seed, and an
/// optional frame-count override.
pub fn read_scene_manifest(path: &Path) -> Result<SceneManifest> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::format(path, format!("not readable as text: {e}")))?;
    let mut problems = Vec::new();
    let mut raw = RawManifest::parse(&text, &mut problems);
    let preset = required(raw.take("scene", "preset"), "[scene] preset", &mut problems);
    let seed: u64 = parse_num(raw.take("scene", "seed"), "[scene] seed", &mut problems).unwrap_or(0);
    let frames: Option<usize> = parse_num(raw.take("scene", "frames"), "[scene] frames", &mut problems);
    let noise_sigma: f64 = parse_num(
        raw.take("perturb", "noise_sigma"),
        "[perturb] noise_sigma",
        &mut problems,
    )
    .unwrap_or(0.0);
    let blur_radius: f64 = parse_num(
        raw.take("perturb", "blur_radius"),
        "[perturb] blur_radius",
        &mut problems,
    )
    .unwrap_or(0.0);
    let depth_scale: f64 = parse_num(
        raw.take("perturb", "depth_scale"),
        "[perturb] depth_scale",
        &mut problems,
    )
    .unwrap_or(1.0);
    let perturb_seed: Option<u64> =
        parse_num(raw.take("perturb", "seed"), "[perturb] seed", &mut problems);
    for (what, v) in [("noise_sigma", noise_sigma), ("blur_radius", blur_radius)] {
        if !(v >= 0.0) {
            problems.push(format!("[perturb] {what} must be nonnegative, got {v}"));
        }
    }
    if !(depth_scale > 0.0) {
        problems.push(format!(
            "[perturb] depth_scale must be positive, got {depth_scale}"
        ));
    }
    raw.report_leftovers(&mut problems);
    match preset {
        Some(preset) if problems.is_empty() => Ok(SceneManifest {
            preset,
            seed,
            frames,
            noise_sigma,
            blur_radius,
            depth_scale,
            perturb_seed,
        }),
        _ => Err(Error::ManifestInvalid {
            path: path.to_path_buf(),
            problems,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::View;
    use crate::io::flo::write_flo;
    use crate::io::pfm::{write_pfm, write_pfm_depth};
    use crate::io::poses::write_kitti_poses;
    use crate::synth::{generate, render_image, SceneSpec};
    use tempfile::tempdir;

    /// Writes a complete 2-frame bundle to disk and returns its manifest.
    fn write_fixture(dir: &Path) -> RunManifest {
        let mut spec = SceneSpec::preset("flat", 0).unwrap();
        spec.frames = 2;
        let sb = generate(&spec).unwrap();
        let mf = RunManifest {
            root: dir.to_path_buf(),
            rig: spec.rig,
            frames: 2,
            left_depth: "left_{i}.pfm".into(),
            right_depth: Some("right_{i}.pfm".into()),
            left_image: Some("img_l_{i}.pfm".into()),
            right_image: Some("img_r_{i}.pfm".into()),
            trajectory: Some("poses.txt".into()),
            png_scale: DEFAULT_PNG_SCALE,
            pairs: Some(PairTemplates {
                lr_forward: Some("lr_f_{i}.flo".into()),
                lr_backward: Some("lr_b_{i}.flo".into()),
                t_forward: "t_f_{i}_{j}.flo".into(),
                t_backward: "t_b_{i}_{j}.flo".into(),
            }),
            refiner: RefinerConfig::default(),
            fb_threshold: 1.0,
        };
        for i in 0..2 {
            write_pfm_depth(&dir.join(format!("left_{i}.pfm")), &sb.gt_left[i]).unwrap();
            write_pfm_depth(&dir.join(format!("right_{i}.pfm")), &sb.gt_right[i]).unwrap();
            write_pfm(
                &dir.join(format!("img_l_{i}.pfm")),
                &render_image(&spec, i, View::Left),
            )
            .unwrap();
            write_pfm(
                &dir.join(format!("img_r_{i}.pfm")),
                &render_image(&spec, i, View::Right),
            )
            .unwrap();
            let lr = &sb.bundle.lr_flows[&i];
            write_flo(&dir.join(format!("lr_f_{i}.flo")), &lr.forward).unwrap();
            write_flo(&dir.join(format!("lr_b_{i}.flo")), &lr.backward).unwrap();
        }
        let t = &sb.bundle.t_flows[&(0, 1)];
        write_flo(&dir.join("t_f_0_1.flo"), &t.forward).unwrap();
        write_flo(&dir.join("t_b_0_1.flo"), &t.backward).unwrap();
        write_kitti_poses(
            &dir.join("poses.txt"),
            &[spec.trajectory.pose(0), spec.trajectory.pose(1)],
        )
        .unwrap();
        mf
    }

    #[test]
    fn manifest_round_trips_and_loads() {
        let dir = tempdir().unwrap();
        let mf = write_fixture(dir.path());
        let path = dir.path().join("run.manifest");
        write_manifest(&path, &mf).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back, mf);
        let bundle = load_bundle(&back).unwrap();
        assert_eq!(bundle.frame_count(), 2);
        assert_eq!(bundle.width(), 64);
        assert!(bundle.right_depths.is_some());
        assert!(bundle.left_images.is_some());
        assert_eq!(bundle.lr_flows.len(), 2);
        assert_eq!(bundle.t_flows.len(), 1);
        // Flat scene: the loaded depths are exactly 8.
        assert_eq!(bundle.left_depths[0].get(10, 10), Some(8.0));
    }

    #[test]
    fn unknown_and_missing_keys_are_all_reported() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.manifest");
        std::fs::write(
            &path,
            "[rig]\nfx = 60\nfocal = 60\n[frames]\ncount = 2\n",
        )
        .unwrap();
        let err = read_manifest(&path).unwrap_err();
        let msg = err.to_string();
        for needle in ["focal", "fy", "left_depth", "baseline"] {
            assert!(msg.contains(needle), "missing {needle:?} in {msg}");
        }
    }

    #[test]
    fn dangling_files_are_listed() {
        let dir = tempdir().unwrap();
        let mf = write_fixture(dir.path());
        std::fs::remove_file(dir.path().join("left_1.pfm")).unwrap();
        std::fs::remove_file(dir.path().join("t_f_0_1.flo")).unwrap();
        let path = dir.path().join("run.manifest");
        write_manifest(&path, &mf).unwrap();
        let msg = read_manifest(&path).unwrap_err().to_string();
        assert!(msg.contains("left_1.pfm"), "{msg}");
        assert!(msg.contains("t_f_0_1.flo"), "{msg}");
    }

    #[test]
    fn bad_values_are_rejected_with_names() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("vals.manifest");
        std::fs::write(
            &path,
            "[rig]\nfx = sixty\nfy = 60\ncx = 31.5\ncy = 23.5\nwidth = 64\nheight = 48\nbaseline = 0.5\n[frames]\ncount = 2\nleft_depth = l_{i}.pfm\n[refiner]\nedge = sobel\n",
        )
        .unwrap();
        let msg = read_manifest(&path).unwrap_err().to_string();
        assert!(msg.contains("fx"), "{msg}");
        assert!(msg.contains("sobel"), "{msg}");
    }

    #[test]
    fn mismatched_dimensions_are_rejected_at_load() {
        let dir = tempdir().unwrap();
        let mf = write_fixture(dir.path());
        // Overwrite one depth with the wrong size.
        let small = crate::grid::DepthMap::from_values(crate::grid::Grid::new(8, 6, 5.0));
        write_pfm_depth(&dir.path().join("left_1.pfm"), &small).unwrap();
        let path = dir.path().join("run.manifest");
        write_manifest(&path, &mf).unwrap();
        let mf = read_manifest(&path).unwrap();
        let err = load_bundle(&mf).unwrap_err().to_string();
        assert!(err.contains("8x6"), "{err}");
    }

    #[test]
    fn scene_manifest_parses_and_rejects_unknowns() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("scene.manifest");
        std::fs::write(&path, "[scene]\npreset = sphere\nseed = 9\n").unwrap();
        let sm = read_scene_manifest(&path).unwrap();
        assert_eq!(sm.preset, "sphere");
        assert_eq!(sm.seed, 9);
        assert_eq!(sm.frames, None);
        assert_eq!(sm.noise_sigma, 0.0);
        assert_eq!(sm.depth_scale, 1.0);
        std::fs::write(&path, "[scene]\npreset = sphere\ncolor = blue\n").unwrap();
        let msg = read_scene_manifest(&path).unwrap_err().to_string();
        assert!(msg.contains("color"), "{msg}");
    }

    #[test]
    fn scene_manifest_reads_perturbation_keys() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("scene.manifest");
        std::fs::write(
            &path,
            "[scene]\npreset = slanted\nseed = 3\nframes = 4\n\n[perturb]\nnoise_sigma = 0.1\nblur_radius = 1.5\nseed = 77\n",
        )
        .unwrap();
        let sm = read_scene_manifest(&path).unwrap();
        assert_eq!(sm.frames, Some(4));
        assert_eq!(sm.noise_sigma, 0.1);
        assert_eq!(sm.blur_radius, 1.5);
        assert_eq!(sm.perturb_seed, Some(77));
        std::fs::write(
            &path,
            "[scene]\npreset = slanted\n\n[perturb]\nnoise_sigma = -0.5\n",
        )
        .unwrap();
        let msg = read_scene_manifest(&path).unwrap_err().to_string();
        assert!(msg.contains("noise_sigma"), "{msg}");
    }

    #[test]
    fn duplicate_keys_are_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("dup.manifest");
        std::fs::write(&path, "[scene]\npreset = flat\npreset = sphere\n").unwrap();
        let msg = read_scene_manifest(&path).unwrap_err().to_string();
        assert!(msg.contains("duplicate"), "{msg}");
    }
}
