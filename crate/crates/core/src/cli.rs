//! Command-line front end. Four subcommands compose the pipeline: `synth`
//! writes a synthetic bundle, `refine` optimizes its depths, `eval` scores
//! predictions, `losses` reports every term without optimizing.
//!
//! Exit codes: 0 success, 1 validation failure, 2 runtime failure.
//! Logs go to stderr, tables to stdout, machine-readable records to files.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bundle::VideoBundle;
use crate::error::{Error, Result};
use crate::flow::consistency_mask;
use crate::grid::{DepthMap, Grid};
use crate::io::manifest::{
    expand_template, load_bundle, read_depth_auto, read_manifest, read_scene_manifest,
    write_manifest, PairTemplates, RunManifest, SceneManifest, DEFAULT_PNG_SCALE,
};
use crate::io::pfm::{read_pfm, write_pfm, write_pfm_depth};
use crate::io::poses::write_kitti_poses;
use crate::loss::edge::{edge_mask, EdgeLossKind, EdgeMaskKind};
use crate::metrics::{
    align_scale, eval_depth, eval_sequence, eval_sequence_photo, photometric_metric,
    DepthEvalResult, PhotoEvalResult,
};
use crate::refine::{
    build_pair_sets, bundle_loss, refine, total_loss, LossReport, RefinerConfig, Sampling,
};
use crate::synth::{generate, perturb, Perturbation, SceneSpec};

#[derive(Parser)]
#[command(
    name = "depthtune",
    version,
    about = "Stereo video depth refinement: synthesize, refine, evaluate, inspect"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic stereo bundle (depths, images, flows, masks,
    /// poses, manifest) from a scene manifest.
    Synth {
        /// Scene manifest: [scene] preset/seed/frames, optional [perturb].
        scene_manifest: PathBuf,
        /// Output directory; ground truth lands in its gt/ subdirectory.
        out_dir: PathBuf,
    },
    /// Refine the depths referenced by a run manifest.
    Refine {
        manifest: PathBuf,
        out_dir: PathBuf,
        /// Optimization epochs (at least 1).
        #[arg(long)]
        epochs: Option<usize>,
        /// Adam learning rate.
        #[arg(long)]
        lr: Option<f64>,
        #[command(flatten)]
        losses: LossArgs,
        /// Pixel-subset seed for deterministic reruns.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score predicted depths: against ground truth when gt-dir is given,
    /// photometrically via the manifest's image pairs otherwise.
    Eval {
        manifest: PathBuf,
        /// Directory holding predictions under the manifest's depth templates.
        pred_dir: PathBuf,
        /// Directory holding ground truth under the same templates.
        gt_dir: Option<PathBuf>,
        /// Least-squares scale alignment per frame before scoring.
        #[arg(long)]
        align_scale: bool,
    },
    /// Report the full loss breakdown of a depth set without optimizing.
    Losses {
        manifest: PathBuf,
        /// Directory holding the depths under the manifest's templates.
        depth_dir: PathBuf,
        #[command(flatten)]
        losses: LossArgs,
        /// Write pair validity masks and edge masks as PNGs under masks/.
        #[arg(long)]
        dump_masks: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum EdgeArg {
    None,
    Ms,
    Contrastive,
}

impl From<EdgeArg> for EdgeLossKind {
    fn from(a: EdgeArg) -> Self {
        match a {
            EdgeArg::None => EdgeLossKind::None,
            EdgeArg::Ms => EdgeLossKind::Multiscale,
            EdgeArg::Contrastive => EdgeLossKind::Contrastive,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplingArg {
    Consecutive,
    Hierarchical,
}

impl From<SamplingArg> for Sampling {
    fn from(a: SamplingArg) -> Self {
        match a {
            SamplingArg::Consecutive => Sampling::Consecutive,
            SamplingArg::Hierarchical => Sampling::Hierarchical,
        }
    }
}

/// Loss-shape overrides shared by `refine` and `losses`. Command-line
/// values beat manifest values.
#[derive(Args)]
struct LossArgs {
    /// Disparity weight inside each pair loss.
    #[arg(long)]
    lambda: Option<f64>,
    /// Edge-preservation loss kind.
    #[arg(long, value_enum)]
    edge: Option<EdgeArg>,
    /// Weight of the edge loss in the objective.
    #[arg(long)]
    w_edge: Option<f64>,
    /// Temporal pair schedule.
    #[arg(long, value_enum)]
    sampling: Option<SamplingArg>,
    /// Base threshold of the scale-invariant edge mask.
    #[arg(long)]
    alpha: Option<f64>,
}

impl LossArgs {
    fn apply(&self, cfg: &mut RefinerConfig) {
        if let Some(v) = self.lambda {
            cfg.weights.lambda = v;
        }
        if let Some(v) = self.edge {
            cfg.edge_kind = v.into();
        }
        if let Some(v) = self.w_edge {
            cfg.weights.w_edge = v;
        }
        if let Some(v) = self.sampling {
            cfg.sampling = v.into();
        }
        if let Some(v) = self.alpha {
            cfg.edge.alpha = v;
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) | Error::NonFiniteLoss { .. } => 2,
        _ => 1,
    }
}

/// Parses and dispatches; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version print to stdout and succeed; anything else
            // is a usage problem.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.cmd {
        Cmd::Synth {
            scene_manifest,
            out_dir,
        } => cmd_synth(&scene_manifest, &out_dir),
        Cmd::Refine {
            manifest,
            out_dir,
            epochs,
            lr,
            losses,
            seed,
        } => cmd_refine(&manifest, &out_dir, epochs, lr, &losses, seed),
        Cmd::Eval {
            manifest,
            pred_dir,
            gt_dir,
            align_scale,
        } => cmd_eval(&manifest, &pred_dir, gt_dir.as_deref(), align_scale),
        Cmd::Losses {
            manifest,
            depth_dir,
            losses,
            dump_masks,
        } => cmd_losses(&manifest, &depth_dir, &losses, dump_masks),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn fmt_loss(v: f64) -> String {
    format!("{v:.6e}")
}

fn fmt_frac(v: f64) -> String {
    format!("{v:.6}")
}

/// Space-aligned UTF-8 table on stdout: header row, rule, data rows.
fn print_table(headers: &[&str], rows: &[Vec<String>]) {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let mut out = String::new();
        for (i, cell) in cells.iter().enumerate() {
            if i > 0 {
                out.push_str("  ");
            }
            out.push_str(cell);
            for _ in cell.chars().count()..widths[i] {
                out.push(' ');
            }
        }
        println!("{}", out.trim_end());
    };
    line(&headers.iter().map(|h| h.to_string()).collect::<Vec<_>>());
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    line(&rule);
    for row in rows {
        line(row);
    }
}

fn write_mask_png(path: &Path, grid: &Grid<bool>) -> Result<()> {
    let mut img = image::GrayImage::new(grid.width() as u32, grid.height() as u32);
    for y in 0..grid.height() {
        for x in 0..grid.width() {
            img.put_pixel(x as u32, y as u32, image::Luma([if grid.at(x, y) { 255 } else { 0 }]));
        }
    }
    img.save(path)
        .map_err(|e| Error::format(path, format!("png encode failed: {e}")))
}

/// Writes line-delimited JSON records; one `serde_json::Value` per line.
fn write_records(path: &Path, records: &[serde_json::Value]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_string());
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Degradation chain for the working depths: blur, then noise, then scale.
fn degrade(map: &DepthMap, sm: &SceneManifest, seed: u64) -> Result<DepthMap> {
    let blurred = perturb(
        map,
        &Perturbation::Blur {
            radius: sm.blur_radius,
        },
        seed,
    )?;
    let noised = perturb(
        &blurred,
        &Perturbation::Noise {
            sigma: sm.noise_sigma,
        },
        seed,
    )?;
    perturb(
        &noised,
        &Perturbation::Scale {
            factor: sm.depth_scale,
        },
        seed,
    )
}

fn cmd_synth(scene_manifest: &Path, out_dir: &Path) -> Result<()> {
    let sm = read_scene_manifest(scene_manifest)?;
    let mut spec = SceneSpec::preset(&sm.preset, sm.seed)?;
    if let Some(n) = sm.frames {
        spec.frames = n;
    }
    eprintln!(
        "synth: preset {} seed {} frames {}",
        sm.preset, sm.seed, spec.frames
    );
    let sb = generate(&spec)?;
    fs::create_dir_all(out_dir)?;
    let gt_dir = out_dir.join("gt");
    fs::create_dir_all(&gt_dir)?;
    let mut written = 0usize;
    let pseed = sm.perturb_seed.unwrap_or(sm.seed);

    for i in 0..spec.frames {
        write_pfm_depth(&gt_dir.join(format!("left_{i}.pfm")), &sb.gt_left[i])?;
        write_pfm_depth(&gt_dir.join(format!("right_{i}.pfm")), &sb.gt_right[i])?;
        let left = degrade(&sb.gt_left[i], &sm, pseed.wrapping_add(2 * i as u64))?;
        let right = degrade(&sb.gt_right[i], &sm, pseed.wrapping_add(2 * i as u64 + 1))?;
        write_pfm_depth(&out_dir.join(format!("left_{i}.pfm")), &left)?;
        write_pfm_depth(&out_dir.join(format!("right_{i}.pfm")), &right)?;
        written += 4;
    }
    let left_images = sb.bundle.left_images.as_ref().unwrap();
    let right_images = sb.bundle.right_images.as_ref().unwrap();
    for i in 0..spec.frames {
        write_pfm(&out_dir.join(format!("img_left_{i}.pfm")), &left_images[i])?;
        write_pfm(&out_dir.join(format!("img_right_{i}.pfm")), &right_images[i])?;
        written += 2;
    }
    for (i, pair) in &sb.bundle.lr_flows {
        crate::io::flo::write_flo(&out_dir.join(format!("flow_lr_f_{i}.flo")), &pair.forward)?;
        crate::io::flo::write_flo(&out_dir.join(format!("flow_lr_b_{i}.flo")), &pair.backward)?;
        written += 2;
    }
    for ((i, j), pair) in &sb.bundle.t_flows {
        crate::io::flo::write_flo(&out_dir.join(format!("flow_t_f_{i}_{j}.flo")), &pair.forward)?;
        crate::io::flo::write_flo(&out_dir.join(format!("flow_t_b_{i}_{j}.flo")), &pair.backward)?;
        written += 2;
    }
    for (i, mask) in &sb.lr_masks {
        write_mask_png(&out_dir.join(format!("mask_lr_{i}.png")), mask.grid())?;
        written += 1;
    }
    for ((i, j), mask) in &sb.t_masks {
        write_mask_png(&out_dir.join(format!("mask_t_{i}_{j}.png")), mask.grid())?;
        written += 1;
    }
    write_kitti_poses(&out_dir.join("poses.txt"), &sb.bundle.trajectory)?;
    written += 1;

    let mf = RunManifest {
        root: out_dir.to_path_buf(),
        rig: spec.rig,
        frames: spec.frames,
        left_depth: "left_{i}.pfm".into(),
        right_depth: Some("right_{i}.pfm".into()),
        left_image: Some("img_left_{i}.pfm".into()),
        right_image: Some("img_right_{i}.pfm".into()),
        trajectory: Some("poses.txt".into()),
        png_scale: DEFAULT_PNG_SCALE,
        pairs: Some(PairTemplates {
            lr_forward: Some("flow_lr_f_{i}.flo".into()),
            lr_backward: Some("flow_lr_b_{i}.flo".into()),
            t_forward: "flow_t_f_{i}_{j}.flo".into(),
            t_backward: "flow_t_b_{i}_{j}.flo".into(),
        }),
        refiner: RefinerConfig::default(),
        fb_threshold: sb.bundle.fb_threshold,
    };
    write_manifest(&out_dir.join("run.manifest"), &mf)?;
    written += 1;
    let gt_count = 2 * spec.frames;

    print_table(
        &["kind", "count", "template"],
        &[
            vec!["depth".into(), (2 * spec.frames).to_string(), "left_{i}.pfm right_{i}.pfm".into()],
            vec!["gt depth".into(), gt_count.to_string(), "gt/left_{i}.pfm gt/right_{i}.pfm".into()],
            vec!["image".into(), (2 * spec.frames).to_string(), "img_left_{i}.pfm img_right_{i}.pfm".into()],
            vec!["lr flow".into(), (2 * sb.bundle.lr_flows.len()).to_string(), "flow_lr_f_{i}.flo flow_lr_b_{i}.flo".into()],
            vec!["t flow".into(), (2 * sb.bundle.t_flows.len()).to_string(), "flow_t_f_{i}_{j}.flo flow_t_b_{i}_{j}.flo".into()],
            vec!["mask".into(), (sb.lr_masks.len() + sb.t_masks.len()).to_string(), "mask_lr_{i}.png mask_t_{i}_{j}.png".into()],
            vec!["poses".into(), "1".into(), "poses.txt".into()],
            vec!["manifest".into(), "1".into(), "run.manifest".into()],
        ],
    );
    println!();
    println!(
        "synth: wrote {written} files to {}",
        out_dir.display()
    );
    Ok(())
}

fn history_headers(with_edge: bool) -> Vec<&'static str> {
    if with_edge {
        vec!["epoch", "lr_geometric", "temporal", "edge", "total"]
    } else {
        vec!["epoch", "lr_geometric", "temporal", "total"]
    }
}

fn cmd_refine(
    manifest: &Path,
    out_dir: &Path,
    epochs: Option<usize>,
    lr: Option<f64>,
    losses: &LossArgs,
    seed: Option<u64>,
) -> Result<()> {
    let mut mf = read_manifest(manifest)?;
    if let Some(v) = epochs {
        mf.refiner.epochs = v;
    }
    if let Some(v) = lr {
        mf.refiner.learning_rate = v;
    }
    losses.apply(&mut mf.refiner);
    if let Some(v) = seed {
        mf.refiner.seed = v;
    }
    mf.refiner.validate()?;
    let bundle = load_bundle(&mf)?;
    eprintln!(
        "refine: {} frames, {} epochs, lr {}, edge {:?}",
        bundle.frame_count(),
        mf.refiner.epochs,
        mf.refiner.learning_rate,
        mf.refiner.edge_kind
    );
    let report = refine(&bundle, &mf.refiner)?;
    let final_loss = total_loss(
        &bundle,
        &mf.refiner,
        &report.final_left,
        report.final_right.as_deref(),
        &bundle.left_depths,
    )?;
    eprintln!("refine: finished in {:.2?}", report.wall);

    fs::create_dir_all(out_dir)?;
    let mut written = 0usize;
    for (i, d) in report.final_left.iter().enumerate() {
        write_pfm_depth(&out_dir.join(expand_template(&mf.left_depth, i, None)), d)?;
        written += 1;
    }
    if let (Some(t), Some(finals)) = (&mf.right_depth, &report.final_right) {
        for (i, d) in finals.iter().enumerate() {
            write_pfm_depth(&out_dir.join(expand_template(t, i, None)), d)?;
            written += 1;
        }
    }
    let mut records = Vec::new();
    for r in &report.history {
        records.push(serde_json::json!({
            "epoch": r.epoch,
            "lr_geometric": r.lr_loss,
            "temporal": r.temporal_loss,
            "edge": r.edge_loss,
            "total": r.total,
        }));
    }
    records.push(serde_json::json!({
        "epoch": "final",
        "lr_geometric": final_loss.geometric.lr_total,
        "temporal": final_loss.geometric.temporal_total,
        "edge": final_loss.edge_total,
        "total": final_loss.total,
    }));
    write_records(&out_dir.join("history.jsonl"), &records)?;
    written += 1;
    write_manifest(&out_dir.join("effective.manifest"), &mf)?;
    written += 1;

    let with_edge = mf.refiner.edge_kind != EdgeLossKind::None;
    let mut rows: Vec<Vec<String>> = Vec::new();
    for r in &report.history {
        let mut row = vec![
            r.epoch.to_string(),
            fmt_loss(r.lr_loss),
            fmt_loss(r.temporal_loss),
        ];
        if with_edge {
            row.push(fmt_loss(r.edge_loss));
        }
        row.push(fmt_loss(r.total));
        rows.push(row);
    }
    let mut final_row = vec![
        "final".to_string(),
        fmt_loss(final_loss.geometric.lr_total),
        fmt_loss(final_loss.geometric.temporal_total),
    ];
    if with_edge {
        final_row.push(fmt_loss(final_loss.edge_total));
    }
    final_row.push(fmt_loss(final_loss.total));
    rows.push(final_row);
    print_table(&history_headers(with_edge), &rows);
    println!();
    println!(
        "refine: total {} -> {}; wrote {written} files to {}",
        fmt_loss(report.history[0].total),
        fmt_loss(final_loss.total),
        out_dir.display()
    );
    Ok(())
}

fn check_missing(
    mf: &RunManifest,
    pred_dir: &Path,
    gt_dir: Option<&Path>,
) -> Result<()> {
    let mut missing = Vec::new();
    for i in 0..mf.frames {
        let rel = expand_template(&mf.left_depth, i, None);
        if !pred_dir.join(&rel).is_file() {
            missing.push(format!("{rel} (prediction)"));
        }
        if let Some(gt) = gt_dir {
            if !gt.join(&rel).is_file() {
                missing.push(format!("{rel} (ground truth)"));
            }
        }
    }
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "missing frames: {}",
            missing.join(", ")
        )))
    }
}

fn cmd_eval(
    manifest: &Path,
    pred_dir: &Path,
    gt_dir: Option<&Path>,
    align: bool,
) -> Result<()> {
    let mf = read_manifest(manifest)?;
    check_missing(&mf, pred_dir, gt_dir)?;
    let mut records = Vec::new();
    if let Some(gt_dir) = gt_dir {
        let mut results: Vec<DepthEvalResult> = Vec::new();
        let mut rows: Vec<Vec<String>> = Vec::new();
        for i in 0..mf.frames {
            let rel = expand_template(&mf.left_depth, i, None);
            let pred = read_depth_auto(pred_dir, &rel, mf.png_scale)?;
            let gt = read_depth_auto(gt_dir, &rel, mf.png_scale)?;
            let (pred, s) = if align {
                align_scale(&pred, &gt)?
            } else {
                (pred, 1.0)
            };
            let r = eval_depth(&pred, &gt)?;
            let mut row = vec![i.to_string()];
            if align {
                row.push(fmt_frac(s));
            }
            row.extend([
                fmt_frac(r.abs_rel),
                fmt_frac(r.exceed_1),
                fmt_frac(r.exceed_2),
                fmt_frac(r.exceed_3),
                r.evaluated_pixels.to_string(),
            ]);
            rows.push(row);
            let mut rec = serde_json::json!({
                "frame": i,
                "abs_rel": r.abs_rel,
                "exceed_1": r.exceed_1,
                "exceed_2": r.exceed_2,
                "exceed_3": r.exceed_3,
                "pixels": r.evaluated_pixels,
            });
            if align {
                rec["scale"] = serde_json::json!(s);
            }
            records.push(rec);
            results.push(r);
        }
        let mean = eval_sequence(&results)?;
        let mut row = vec!["mean".to_string()];
        if align {
            row.push("-".to_string());
        }
        row.extend([
            fmt_frac(mean.abs_rel),
            fmt_frac(mean.exceed_1),
            fmt_frac(mean.exceed_2),
            fmt_frac(mean.exceed_3),
            mean.evaluated_pixels.to_string(),
        ]);
        rows.push(row);
        records.push(serde_json::json!({
            "frame": "mean",
            "abs_rel": mean.abs_rel,
            "exceed_1": mean.exceed_1,
            "exceed_2": mean.exceed_2,
            "exceed_3": mean.exceed_3,
            "pixels": mean.evaluated_pixels,
        }));
        let mut headers = vec!["frame"];
        if align {
            headers.push("scale");
        }
        headers.extend(["abs_rel", "exceed@1.25", "exceed@1.25^2", "exceed@1.25^3", "pixels"]);
        print_table(&headers, &rows);
        println!();
        println!("eval: mean abs_rel {}", fmt_frac(mean.abs_rel));
    } else {
        if align {
            return Err(Error::InvalidConfig(
                "--align-scale needs a ground-truth directory to align against".into(),
            ));
        }
        let (li, ri) = match (&mf.left_image, &mf.right_image) {
            (Some(l), Some(r)) => (l, r),
            _ => {
                return Err(Error::InvalidConfig(
                    "photometric evaluation needs left_image and right_image in the manifest"
                        .into(),
                ))
            }
        };
        let mut results: Vec<PhotoEvalResult> = Vec::new();
        let mut rows: Vec<Vec<String>> = Vec::new();
        for i in 0..mf.frames {
            let rel = expand_template(&mf.left_depth, i, None);
            let pred = read_depth_auto(pred_dir, &rel, mf.png_scale)?;
            let left = read_pfm(&mf.root.join(expand_template(li, i, None)))?;
            let right = read_pfm(&mf.root.join(expand_template(ri, i, None)))?;
            let r = photometric_metric(&left, &right, &pred, &mf.rig)?;
            rows.push(vec![
                i.to_string(),
                fmt_loss(r.l1),
                fmt_loss(r.l2),
                r.covered_pixels.to_string(),
                r.excluded_pixels.to_string(),
            ]);
            records.push(serde_json::json!({
                "frame": i,
                "l1": r.l1,
                "l2": r.l2,
                "covered": r.covered_pixels,
                "excluded": r.excluded_pixels,
            }));
            results.push(r);
        }
        let mean = eval_sequence_photo(&results)?;
        rows.push(vec![
            "mean".to_string(),
            fmt_loss(mean.l1),
            fmt_loss(mean.l2),
            mean.covered_pixels.to_string(),
            mean.excluded_pixels.to_string(),
        ]);
        records.push(serde_json::json!({
            "frame": "mean",
            "l1": mean.l1,
            "l2": mean.l2,
            "covered": mean.covered_pixels,
            "excluded": mean.excluded_pixels,
        }));
        print_table(&["frame", "photo_l1", "photo_l2", "covered", "excluded"], &rows);
        println!();
        println!("eval: mean photometric l1 {}", fmt_loss(mean.l1));
    }
    write_records(&pred_dir.join("eval_records.jsonl"), &records)?;
    Ok(())
}

fn cmd_losses(
    manifest: &Path,
    depth_dir: &Path,
    losses: &LossArgs,
    dump_masks: bool,
) -> Result<()> {
    let mut mf = read_manifest(manifest)?;
    losses.apply(&mut mf.refiner);
    mf.refiner.validate()?;
    check_missing(&mf, depth_dir, None)?;
    let mut bundle = load_bundle(&mf)?;
    for i in 0..mf.frames {
        bundle.left_depths[i] =
            read_depth_auto(depth_dir, &expand_template(&mf.left_depth, i, None), mf.png_scale)?;
    }
    if let (Some(t), Some(rights)) = (&mf.right_depth, bundle.right_depths.as_mut()) {
        for (i, slot) in rights.iter_mut().enumerate() {
            let rel = expand_template(t, i, None);
            if depth_dir.join(&rel).is_file() {
                *slot = read_depth_auto(depth_dir, &rel, mf.png_scale)?;
            }
        }
    }
    bundle.validate()?;
    let report = bundle_loss(&bundle, &mf.refiner)?;
    print_loss_report(&bundle, &mf, &report, depth_dir)?;
    if dump_masks {
        dump_mask_images(&bundle, &mf, depth_dir)?;
    }
    Ok(())
}

fn print_loss_report(
    bundle: &VideoBundle,
    mf: &RunManifest,
    report: &LossReport,
    depth_dir: &Path,
) -> Result<()> {
    let mut records = Vec::new();
    let mut rows: Vec<Vec<String>> = Vec::new();
    let coverage: std::collections::BTreeMap<String, (usize, usize)> = report
        .mask_coverage
        .iter()
        .map(|(id, valid, total)| (id.to_string(), (*valid, *total)))
        .collect();
    for (id, b) in &report.geometric.pairs {
        let (valid, total) = coverage[&id.to_string()];
        rows.push(vec![
            id.to_string(),
            valid.to_string(),
            total.to_string(),
            fmt_loss(b.spatial),
            fmt_loss(b.disparity),
            fmt_loss(b.combined),
        ]);
        records.push(serde_json::json!({
            "row": "pair",
            "pair": id.to_string(),
            "valid": valid,
            "pixels": total,
            "spatial": b.spatial,
            "disparity": b.disparity,
            "combined": b.combined,
        }));
    }
    print_table(
        &["pair", "valid", "pixels", "spatial", "disparity", "combined"],
        &rows,
    );
    println!();

    // Edge-mask census of the current depths at every scale; doubling the
    // mask threshold can only shrink these counts.
    let mut census_rows: Vec<Vec<String>> = Vec::new();
    for &h in &mf.refiner.edge.scales {
        let (mut si_px, mut ratio_px) = (0usize, 0usize);
        for d in &bundle.left_depths {
            si_px += edge_mask(d, h, &mf.refiner.edge, EdgeMaskKind::ScaleInvariant).count();
            ratio_px += edge_mask(d, h, &mf.refiner.edge, EdgeMaskKind::Ratio).count();
        }
        census_rows.push(vec![
            h.to_string(),
            fmt_frac(mf.refiner.edge.si_threshold(h)),
            si_px.to_string(),
            fmt_frac(mf.refiner.edge.ratio_threshold(h)),
            ratio_px.to_string(),
        ]);
        records.push(serde_json::json!({
            "row": "census",
            "h": h,
            "si_threshold": mf.refiner.edge.si_threshold(h),
            "si_pixels": si_px,
            "ratio_threshold": mf.refiner.edge.ratio_threshold(h),
            "ratio_pixels": ratio_px,
        }));
    }
    print_table(
        &["h", "si_threshold", "si_pixels", "ratio_threshold", "ratio_pixels"],
        &census_rows,
    );
    println!();

    if mf.refiner.edge_kind != EdgeLossKind::None {
        let mut edge_rows: Vec<Vec<String>> = Vec::new();
        for (frame, er) in report.edge.iter().enumerate() {
            for s in &er.per_scale {
                edge_rows.push(vec![
                    frame.to_string(),
                    s.scale.to_string(),
                    s.active.to_string(),
                    fmt_loss(s.value),
                ]);
                records.push(serde_json::json!({
                    "row": "edge",
                    "frame": frame,
                    "h": s.scale,
                    "active": s.active,
                    "value": s.value,
                }));
            }
        }
        print_table(&["frame", "h", "active", "edge_value"], &edge_rows);
        println!();
    }

    print_table(
        &["lr_geometric", "temporal", "geometric", "edge", "total"],
        &[vec![
            fmt_loss(report.geometric.lr_total),
            fmt_loss(report.geometric.temporal_total),
            fmt_loss(report.geometric.total),
            fmt_loss(report.edge_total),
            fmt_loss(report.total),
        ]],
    );
    records.push(serde_json::json!({
        "row": "totals",
        "lr_geometric": report.geometric.lr_total,
        "temporal": report.geometric.temporal_total,
        "geometric": report.geometric.total,
        "edge": report.edge_total,
        "total": report.total,
    }));
    write_records(&depth_dir.join("loss_records.jsonl"), &records)?;
    println!();
    println!("losses: total {}", fmt_loss(report.total));
    Ok(())
}

fn dump_mask_images(bundle: &VideoBundle, mf: &RunManifest, depth_dir: &Path) -> Result<()> {
    let mask_dir = depth_dir.join("masks");
    fs::create_dir_all(&mask_dir)?;
    let mut written = 0usize;
    let sets = build_pair_sets(bundle.frame_count(), mf.refiner.sampling)?;
    if bundle.right_depths.is_some() {
        for &i in &sets.lr {
            if let Some(pair) = bundle.lr_flows.get(&i) {
                let m = consistency_mask(&pair.forward, &pair.backward, bundle.fb_threshold)?;
                write_mask_png(&mask_dir.join(format!("mask_lr_{i}.png")), m.grid())?;
                written += 1;
            }
        }
    }
    for &(i, j) in &sets.temporal {
        if let Some(pair) = bundle.t_flows.get(&(i, j)) {
            let m = consistency_mask(&pair.forward, &pair.backward, bundle.fb_threshold)?;
            write_mask_png(&mask_dir.join(format!("mask_t_{i}_{j}.png")), m.grid())?;
            written += 1;
        }
    }
    for (f, d) in bundle.left_depths.iter().enumerate() {
        for &h in &mf.refiner.edge.scales {
            let si = edge_mask(d, h, &mf.refiner.edge, EdgeMaskKind::ScaleInvariant);
            let ratio = edge_mask(d, h, &mf.refiner.edge, EdgeMaskKind::Ratio);
            write_mask_png(&mask_dir.join(format!("edge_si_f{f}_h{h}.png")), si.grid())?;
            write_mask_png(&mask_dir.join(format!("edge_ratio_f{f}_h{h}.png")), ratio.grid())?;
            written += 2;
        }
    }
    eprintln!("losses: wrote {written} mask images to {}", mask_dir.display());
    Ok(())
}
