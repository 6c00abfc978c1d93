//! File formats: optical flow, float and quantized depth, poses, and the
//! run manifest that ties a directory of them into a refinable bundle.

pub mod flo;
pub mod manifest;
pub mod pfm;
pub mod png16;
pub mod poses;

pub use flo::{read_flo, write_flo};
pub use manifest::{
    load_bundle, read_manifest, read_scene_manifest, write_manifest, PairTemplates, RunManifest,
    SceneManifest,
};
pub use pfm::{read_pfm, read_pfm_depth, write_pfm, write_pfm_depth};
pub use png16::{read_png16_depth, write_png16_depth};
pub use poses::{read_kitti_poses, write_kitti_poses};
