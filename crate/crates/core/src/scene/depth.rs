//! Depth map decoding from 16-bit single-channel PNGs.

use std::path::Path;

use super::SceneError;

/// Per-pixel depth in meters, row-major. 0.0 marks an invalid measurement.
#[derive(Debug, Clone)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    meters: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: u32, height: u32, meters: Vec<f32>) -> Self {
        assert_eq!(meters.len(), (width as usize) * (height as usize));
        Self {
            width,
            height,
            meters,
        }
    }

    #[inline]
    pub fn at(&self, x: u32, y: u32) -> f32 {
        self.meters[(y as usize) * (self.width as usize) + x as usize]
    }

    /// Depth at (x, y) if the pixel carries a valid measurement.
    #[inline]
    pub fn valid_at(&self, x: u32, y: u32) -> Option<f64> {
        let v = self.at(x, y);
        (v > 0.0).then_some(v as f64)
    }

    pub fn valid_count(&self) -> usize {
        self.meters.iter().filter(|v| **v > 0.0).count()
    }
}

/// Read image dimensions without decoding pixel data.
pub(super) fn png_dimensions(path: &Path) -> Result<(u32, u32), SceneError> {
    image::ImageReader::open(path)
        .map_err(|source| SceneError::Io {
            path: path.to_path_buf(),
            source,
        })?
        .into_dimensions()
        .map_err(|e| SceneError::Depth {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

/// Decode a 16-bit grayscale PNG into meters: `raw * depth_scale`, raw 0 invalid.
pub fn load_depth_png(path: &Path, depth_scale: f64) -> Result<DepthMap, SceneError> {
    let img = image::open(path).map_err(|e| SceneError::Depth {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let buf = match img {
        image::DynamicImage::ImageLuma16(buf) => buf,
        other => {
            return Err(SceneError::Depth {
                path: path.to_path_buf(),
                message: format!(
                    "expected 16-bit single-channel PNG, got {:?}",
                    other.color()
                ),
            });
        }
    };
    let (width, height) = (buf.width(), buf.height());
    let meters = buf
        .into_raw()
        .into_iter()
        .map(|raw| (raw as f64 * depth_scale) as f32)
        .collect();
    Ok(DepthMap::new(width, height, meters))
}
