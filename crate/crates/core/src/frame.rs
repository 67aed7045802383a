//! Raster frames flowing through the pipeline.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrameError {
    #[error("frame dimensions must be at least 1x1, got {width}x{height}")]
    EmptyDimensions { width: usize, height: usize },
    #[error("pixel buffer holds {actual} samples, expected {expected}")]
    BufferLength { expected: usize, actual: usize },
    #[error("expected a {expected:?} frame, got {actual:?}")]
    WrongChannels {
        expected: Channels,
        actual: Channels,
    },
    #[error("timestamp {0} must be finite and non-negative")]
    InvalidTimestamp(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channels {
    Gray8,
    Rgba8,
}

impl Channels {
    pub fn count(self) -> usize {
        match self {
            Channels::Gray8 => 1,
            Channels::Rgba8 => 4,
        }
    }
}

/// A timestamped 8-bit raster, row-major and channel-interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    channels: Channels,
    pixels: Vec<u8>,
    pub index: u64,
    pub timestamp: f64,
}

impl Frame {
    pub fn new(
        width: usize,
        height: usize,
        channels: Channels,
        pixels: Vec<u8>,
    ) -> Result<Self, FrameError> {
        if width == 0 || height == 0 {
            return Err(FrameError::EmptyDimensions { width, height });
        }
        let expected = width * height * channels.count();
        if pixels.len() != expected {
            return Err(FrameError::BufferLength {
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Frame {
            width,
            height,
            channels,
            pixels,
            index: 0,
            timestamp: 0.0,
        })
    }

    pub fn gray(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, FrameError> {
        Self::new(width, height, Channels::Gray8, pixels)
    }

    /// A grayscale frame filled with `value`.
    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self, FrameError> {
        Self::gray(width, height, vec![value; width * height])
    }

    pub fn with_index(mut self, index: u64, timestamp: f64) -> Result<Self, FrameError> {
        if !(timestamp.is_finite() && timestamp >= 0.0) {
            return Err(FrameError::InvalidTimestamp(timestamp));
        }
        self.index = index;
        self.timestamp = timestamp;
        Ok(self)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> Channels {
        self.channels
    }

    #[inline]
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn is_gray(&self) -> bool {
        self.channels == Channels::Gray8
    }

    pub fn require_gray(&self) -> Result<(), FrameError> {
        if self.is_gray() {
            Ok(())
        } else {
            Err(FrameError::WrongChannels {
                expected: Channels::Gray8,
                actual: self.channels,
            })
        }
    }

    /// Grayscale sample at `(x, y)`. Panics on non-gray frames or out-of-range coordinates.
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> u8 {
        debug_assert!(self.is_gray());
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        debug_assert!(self.is_gray());
        self.pixels[y * self.width + x] = value;
    }

    /// Builds a frame with the same ordinal and timestamp but new content.
    pub(crate) fn derive(
        &self,
        width: usize,
        height: usize,
        channels: Channels,
        pixels: Vec<u8>,
    ) -> Frame {
        debug_assert_eq!(pixels.len(), width * height * channels.count());
        Frame {
            width,
            height,
            channels,
            pixels,
            index: self.index,
            timestamp: self.timestamp,
        }
    }

    pub fn flip_horizontal(&self) -> Frame {
        let c = self.channels.count();
        let mut out = Vec::with_capacity(self.pixels.len());
        for row in self.pixels.chunks_exact(self.width * c) {
            for px in row.chunks_exact(c).rev() {
                out.extend_from_slice(px);
            }
        }
        self.derive(self.width, self.height, self.channels, out)
    }

    pub fn flip_vertical(&self) -> Frame {
        let stride = self.width * self.channels.count();
        let mut out = Vec::with_capacity(self.pixels.len());
        for row in self.pixels.chunks_exact(stride).rev() {
            out.extend_from_slice(row);
        }
        self.derive(self.width, self.height, self.channels, out)
    }

    /// Rotates 90 degrees clockwise.
    pub fn rotate90(&self) -> Frame {
        let c = self.channels.count();
        let (w, h) = (self.width, self.height);
        let mut out = vec![0u8; self.pixels.len()];
        for y in 0..h {
            for x in 0..w {
                // (x, y) -> (h - 1 - y, x) in a frame of width h
                let src = (y * w + x) * c;
                let dst = (x * h + (h - 1 - y)) * c;
                out[dst..dst + c].copy_from_slice(&self.pixels[src..src + c]);
            }
        }
        self.derive(h, w, self.channels, out)
    }
}
