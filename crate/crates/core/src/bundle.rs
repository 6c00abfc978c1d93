//! Input bundles for refinement: initial depths, flows for every pair,
//! optional images, the camera trajectory, and the stereo rig.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::flow::{FlowField, DEFAULT_FB_THRESHOLD};
use crate::geometry::{RigidTransform, StereoRig};
use crate::grid::{DepthMap, Grid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum View {
    Left,
    Right,
}

/// Forward and backward flow between one ordered pair of views. The
/// backward field is only consumed by the consistency mask.
#[derive(Debug, Clone)]
pub struct FlowPair {
    pub forward: FlowField,
    pub backward: FlowField,
}

/// Everything the refiner consumes for one sequence. Temporal flows are
/// keyed by (i, j) with i < j; left-right flows by timestamp.
#[derive(Debug, Clone)]
pub struct VideoBundle {
    pub rig: StereoRig,
    /// World-from-camera pose of the left camera per frame.
    pub trajectory: Vec<RigidTransform>,
    pub left_depths: Vec<DepthMap>,
    pub right_depths: Option<Vec<DepthMap>>,
    /// Grayscale intensities in [0, 1], for photometric evaluation only.
    pub left_images: Option<Vec<Grid<f64>>>,
    pub right_images: Option<Vec<Grid<f64>>>,
    pub lr_flows: BTreeMap<usize, FlowPair>,
    pub t_flows: BTreeMap<(usize, usize), FlowPair>,
    /// Forward-backward flow agreement threshold in pixels.
    pub fb_threshold: f64,
}

impl VideoBundle {
    pub fn frame_count(&self) -> usize {
        self.left_depths.len()
    }

    pub fn width(&self) -> usize {
        self.rig.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.rig.intrinsics.height
    }

    pub fn new(rig: StereoRig, trajectory: Vec<RigidTransform>) -> Self {
        VideoBundle {
            rig,
            trajectory,
            left_depths: Vec::new(),
            right_depths: None,
            left_images: None,
            right_images: None,
            lr_flows: BTreeMap::new(),
            t_flows: BTreeMap::new(),
            fb_threshold: DEFAULT_FB_THRESHOLD,
        }
    }

    pub fn depth(&self, frame: usize, view: View) -> Option<&DepthMap> {
        match view {
            View::Left => self.left_depths.get(frame),
            View::Right => self.right_depths.as_ref().and_then(|d| d.get(frame)),
        }
    }

    /// Checks internal consistency: one pose and one left depth per frame,
    /// every grid matching the rig dimensions, and flow pair indices in
    /// range. Flow completeness for a concrete pair set is checked
    /// separately by the refiner.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let n = self.frame_count();
        let (w, h) = (self.width(), self.height());
        if n == 0 {
            problems.push("bundle has no frames".to_string());
        }
        if self.trajectory.len() != n {
            problems.push(format!(
                "trajectory has {} poses for {} frames",
                self.trajectory.len(),
                n
            ));
        }
        if !(self.fb_threshold.is_finite() && self.fb_threshold > 0.0) {
            problems.push(format!(
                "flow consistency threshold must be positive, got {}",
                self.fb_threshold
            ));
        }
        fn check_dims(
            problems: &mut Vec<String>,
            what: String,
            (gw, gh): (usize, usize),
            (w, h): (usize, usize),
        ) {
            if (gw, gh) != (w, h) {
                problems.push(format!("{what} is {gw}x{gh}, rig says {w}x{h}"));
            }
        }
        for (i, d) in self.left_depths.iter().enumerate() {
            check_dims(&mut problems, format!("left depth {i}"), (d.width(), d.height()), (w, h));
        }
        if let Some(rd) = &self.right_depths {
            if rd.len() != n {
                problems.push(format!("{} right depths for {} frames", rd.len(), n));
            }
            for (i, d) in rd.iter().enumerate() {
                check_dims(&mut problems, format!("right depth {i}"), (d.width(), d.height()), (w, h));
            }
        }
        for (name, imgs) in [("left", &self.left_images), ("right", &self.right_images)] {
            if let Some(imgs) = imgs {
                if imgs.len() != n {
                    problems.push(format!("{} {name} images for {n} frames", imgs.len()));
                }
                for (i, img) in imgs.iter().enumerate() {
                    check_dims(&mut problems, format!("{name} image {i}"), (img.width(), img.height()), (w, h));
                }
            }
        }
        for (i, pair) in &self.lr_flows {
            if *i >= n {
                problems.push(format!("left-right flow for frame {i} out of range"));
            }
            for (dir, f) in [("forward", &pair.forward), ("backward", &pair.backward)] {
                check_dims(&mut problems, format!("lr flow {i} {dir}"), (f.width(), f.height()), (w, h));
            }
        }
        for ((i, j), pair) in &self.t_flows {
            if i >= j || *j >= n {
                problems.push(format!("temporal flow ({i},{j}) has bad indices"));
            }
            for (dir, f) in [("forward", &pair.forward), ("backward", &pair.backward)] {
                check_dims(&mut problems, format!("temporal flow ({i},{j}) {dir}"), (f.width(), f.height()), (w, h));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidBundle(problems.join("; ")))
        }
    }
}
