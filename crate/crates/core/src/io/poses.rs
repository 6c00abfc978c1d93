//! KITTI odometry trajectory text: one pose per line as the 12 row-major
//! entries of a 3x4 camera-to-world matrix.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{rotation_defect, RigidTransform};

/// Rotations drifting past this are snapped back to SO(3) and flagged.
const DRIFT_TOL: f64 = 1e-6;

/// Returns the poses plus the indices of lines whose rotation part needed
/// reorthonormalization.
pub fn read_kitti_poses(path: &Path) -> Result<(Vec<RigidTransform>, Vec<usize>)> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::format(path, format!("not readable as text: {e}")))?;
    let mut poses = Vec::new();
    let mut fixed = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 12 {
            return Err(Error::format(
                path,
                format!("line {}: expected 12 values, got {}", lineno + 1, tokens.len()),
            ));
        }
        let mut v = [0.0f64; 12];
        for (i, t) in tokens.iter().enumerate() {
            v[i] = t.parse().map_err(|_| {
                Error::format(path, format!("line {}: bad number {t:?}", lineno + 1))
            })?;
        }
        let rotation = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        let translation = Vector3::new(v[3], v[7], v[11]);
        let mut pose = RigidTransform {
            rotation,
            translation,
        };
        if rotation_defect(&rotation) > DRIFT_TOL {
            pose.reorthonormalize();
            fixed.push(poses.len());
        }
        poses.push(pose);
    }
    Ok((poses, fixed))
}

/// One line per pose; numbers printed with shortest round-trip formatting,
/// so read-back is value-identical.
pub fn write_kitti_poses(path: &Path, poses: &[RigidTransform]) -> Result<()> {
    let mut out = String::new();
    for p in poses {
        let r = &p.rotation;
        let t = &p.translation;
        let row = [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
        ];
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}
