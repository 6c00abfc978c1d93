//! Test-time refinement of stereo video depth maps.
//!
//! Given per-frame depth maps for a calibrated stereo sequence, plus optical
//! flow between paired views, the refiner nudges the depths toward geometric
//! consistency (left/right and across time) while edge-aware losses keep
//! depth discontinuities from washing out. A synthetic scene generator with
//! exact ground truth drives the test suite and the CLI demos.

pub mod bundle;
pub mod cli;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod refine;
pub mod synth;

pub use bundle::{FlowPair, VideoBundle, View};
pub use error::{Error, Result};
pub use flow::{consistency_mask, FlowField, ValidityMask, DEFAULT_FB_THRESHOLD};
pub use geometry::{
    depth_from_disparity, disparity_from_depth, lift, project, relative_pose, CameraIntrinsics,
    RigidTransform, StereoRig,
};
pub use grid::{bilinear_taps, DepthMap, Grid, Tap};
pub use io::{
    load_bundle, read_flo, read_kitti_poses, read_manifest, read_pfm, read_pfm_depth,
    read_png16_depth, read_scene_manifest, write_flo, write_kitti_poses, write_manifest, write_pfm,
    write_pfm_depth, write_png16_depth, PairTemplates, RunManifest, SceneManifest,
};
pub use loss::consistency::{
    geometric_loss, pair_loss, pair_loss_gradient, FramePairContext, GeometricLossReport,
    LossWeights, PairGradient, PairId, PairKind, PairLossBreakdown,
};
pub use loss::edge::{
    contrastive_loss, edge_loss, edge_loss_gradient, edge_mask, multiscale_gradient_loss,
    ratio_gradient, si_gradient, EdgeLossConfig, EdgeLossKind, EdgeLossReport, EdgeMask,
    EdgeMaskKind, GradientField, ScaleReport,
};
pub use metrics::{
    align_scale, eval_depth, eval_sequence, eval_sequence_photo, photometric_metric,
    DepthEvalResult, PhotoEvalResult,
};
pub use refine::{
    build_pair_sets, bundle_loss, gradient_check, refine, total_loss, EpochRecord, GradientCheck,
    LossReport, PairSets, RefineReport, RefinerConfig, Sampling,
};
pub use synth::{
    exact_flow, generate, perturb, render_depth, render_image, ExactFlow, Perturbation, Primitive,
    SceneSpec, Surface, SyntheticBundle, TextureKind, TextureSpec, TrajectorySpec,
};
