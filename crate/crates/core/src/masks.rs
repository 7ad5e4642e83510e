//! Run-length encoded binary masks.
//!
//! Masks travel on the backend wire protocol as COCO-style RLE: the flattened
//! mask is scanned in column-major order (column by column, top to bottom
//! within a column) and `counts` holds the lengths of alternating runs,
//! starting with a background run. A mask that begins with a foreground pixel
//! therefore has `counts[0] == 0`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("rle counts sum to {got} pixels, mask is {width}x{height} = {expected}")]
    SizeMismatch {
        got: u64,
        width: u32,
        height: u32,
        expected: u64,
    },
    #[error("mask dimensions must be positive, got {width}x{height}")]
    EmptyDimensions { width: u32, height: u32 },
    #[error("pixel ({x}, {y}) outside {width}x{height} mask")]
    PixelOutOfBounds {
        x: u32,
        y: u32,
        width: u32,
        height: u32,
    },
}

/// A binary mask in run-length form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    pub width: u32,
    pub height: u32,
    /// Alternating run lengths in column-major order, background first.
    pub counts: Vec<u32>,
}

impl RleMask {
    /// Validate that the runs cover the mask area exactly once.
    pub fn validate(&self) -> Result<(), MaskError> {
        if self.width == 0 || self.height == 0 {
            return Err(MaskError::EmptyDimensions {
                width: self.width,
                height: self.height,
            });
        }
        let got: u64 = self.counts.iter().map(|&c| c as u64).sum();
        let expected = self.width as u64 * self.height as u64;
        if got != expected {
            return Err(MaskError::SizeMismatch {
                got,
                width: self.width,
                height: self.height,
                expected,
            });
        }
        Ok(())
    }

    /// Encode from a column-major flat buffer (`buf[x * height + y]`).
    pub fn from_column_major(width: u32, height: u32, buf: &[bool]) -> Result<Self, MaskError> {
        if width == 0 || height == 0 {
            return Err(MaskError::EmptyDimensions { width, height });
        }
        let expected = width as u64 * height as u64;
        if buf.len() as u64 != expected {
            return Err(MaskError::SizeMismatch {
                got: buf.len() as u64,
                width,
                height,
                expected,
            });
        }
        let mut counts = Vec::new();
        let mut current = false; // runs start with background
        let mut run = 0u32;
        for &bit in buf {
            if bit == current {
                run += 1;
            } else {
                counts.push(run);
                current = bit;
                run = 1;
            }
        }
        counts.push(run);
        Ok(Self {
            width,
            height,
            counts,
        })
    }

    /// Encode from a set of foreground pixel coordinates; everything else is background.
    pub fn from_pixels<I>(width: u32, height: u32, pixels: I) -> Result<Self, MaskError>
    where
        I: IntoIterator<Item = (u32, u32)>,
    {
        if width == 0 || height == 0 {
            return Err(MaskError::EmptyDimensions { width, height });
        }
        let mut buf = vec![false; (width as usize) * (height as usize)];
        for (x, y) in pixels {
            if x >= width || y >= height {
                return Err(MaskError::PixelOutOfBounds {
                    x,
                    y,
                    width,
                    height,
                });
            }
            buf[(x as usize) * (height as usize) + y as usize] = true;
        }
        Self::from_column_major(width, height, &buf)
    }

    /// Decode to a column-major flat buffer.
    pub fn to_column_major(&self) -> Vec<bool> {
        let mut buf = Vec::with_capacity((self.width as usize) * (self.height as usize));
        let mut value = false;
        for &run in &self.counts {
            buf.extend(std::iter::repeat_n(value, run as usize));
            value = !value;
        }
        buf
    }

    /// Foreground pixel coordinates in column-major order.
    pub fn pixels(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::new();
        let mut idx = 0u64;
        let mut value = false;
        let height = self.height as u64;
        for &run in &self.counts {
            if value {
                for i in idx..idx + run as u64 {
                    out.push(((i / height) as u32, (i % height) as u32));
                }
            }
            idx += run as u64;
            value = !value;
        }
        out
    }

    /// Number of foreground pixels.
    pub fn area(&self) -> u64 {
        self.counts
            .iter()
            .enumerate()
            .filter(|(i, _)| i % 2 == 1)
            .map(|(_, &c)| c as u64)
            .sum()
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        if x >= self.width || y >= self.height {
            return false;
        }
        let target = x as u64 * self.height as u64 + y as u64;
        let mut idx = 0u64;
        let mut value = false;
        for &run in &self.counts {
            idx += run as u64;
            if target < idx {
                return value;
            }
            value = !value;
        }
        false
    }

    /// Nearest-neighbor resample to a new resolution.
    ///
    /// Destination pixel centers are mapped back into the source grid, which
    /// keeps the mask binary and is deterministic for replay.
    pub fn resample_nearest(&self, new_width: u32, new_height: u32) -> Result<Self, MaskError> {
        if new_width == 0 || new_height == 0 {
            return Err(MaskError::EmptyDimensions {
                width: new_width,
                height: new_height,
            });
        }
        if new_width == self.width && new_height == self.height {
            return Ok(self.clone());
        }
        let src = self.to_column_major();
        let sx = self.width as f64 / new_width as f64;
        let sy = self.height as f64 / new_height as f64;
        let mut buf = vec![false; (new_width as usize) * (new_height as usize)];
        for x in 0..new_width {
            let src_x = (((x as f64 + 0.5) * sx).floor() as u32).min(self.width - 1);
            for y in 0..new_height {
                let src_y = (((y as f64 + 0.5) * sy).floor() as u32).min(self.height - 1);
                buf[(x as usize) * (new_height as usize) + y as usize] =
                    src[(src_x as usize) * (self.height as usize) + src_y as usize];
            }
        }
        Self::from_column_major(new_width, new_height, &buf)
    }
}
