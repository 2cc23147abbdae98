//! Importer stub for RGB-D scan directories.
//!
//! Full-scale import is out of scope; this module only documents and
//! checks the directory layout the depth labeler would consume:
//!
//! ```text
//! <scene>/
//!   intrinsic.txt     four numbers: fx fy cx cy
//!   color/<frame>.png grayscale or color frames
//!   depth/<frame>.png 16-bit depth, millimeters
//!   pose/<frame>.txt  4x4 camera-to-world matrix, row major
//! ```

use std::path::Path;

use crate::error::{Error, Result};

pub const EXPECTED_LAYOUT: &str = "\
<scene>/intrinsic.txt plus color/, depth/, pose/ directories with one \
entry per frame (color and depth as PNG, pose as a row-major 4x4 text \
matrix)";

/// Check that a scene directory follows the documented layout.
pub fn check_scene_dir(root: impl AsRef<Path>) -> Result<()> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::MissingArtifact(format!(
            "scan scene directory {} (expected {EXPECTED_LAYOUT})",
            root.display()
        )));
    }
    for sub in ["color", "depth", "pose"] {
        if !root.join(sub).is_dir() {
            return Err(Error::MissingArtifact(format!(
                "{}/{sub} (expected {EXPECTED_LAYOUT})",
                root.display()
            )));
        }
    }
    if !root.join("intrinsic.txt").is_file() {
        return Err(Error::MissingArtifact(format!(
            "{}/intrinsic.txt (expected {EXPECTED_LAYOUT})",
            root.display()
        )));
    }
    Ok(())
}
