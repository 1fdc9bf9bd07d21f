//! File formats: SPFM tensors and PPM images.

pub mod ppm;
pub mod spfm;

use std::path::Path;

use crate::error::Result;
use crate::tensor::Image;

/// Reads an image by extension: `.ppm` or SPFM otherwise.
pub fn read_image(path: &Path) -> Result<Image> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("ppm") => ppm::read(path),
        _ => spfm::read_image(path),
    }
}
