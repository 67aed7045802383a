//! Temporal-median background modelling, foreground masks and
//! connected-component region proposals.

use std::collections::VecDeque;

use thiserror::Error;

use crate::frame::{Frame, FrameError};
use crate::geometry::BoundingBox;

pub const DEFAULT_WINDOW: usize = 25;
pub const DEFAULT_DIFF_THRESHOLD: u8 = 30;
pub const DEFAULT_MIN_AREA: usize = 25;
/// Frames required in the buffer before foreground extraction is enabled.
pub const DEFAULT_WARMUP: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackgroundError {
    #[error(
        "frame is {actual_w}x{actual_h} but the background model is {expected_w}x{expected_h}"
    )]
    DimensionMismatch {
        expected_w: usize,
        expected_h: usize,
        actual_w: usize,
        actual_h: usize,
    },
    #[error("background model holds no frames")]
    EmptyModel,
    #[error("window length must be at least 1")]
    ZeroWindow,
    #[error(transparent)]
    Frame(#[from] FrameError),
}

/// Ring buffer of the most recent grayscale frames. Alongside the raw
/// frames it keeps each pixel's history sorted, so a median is a lookup.
#[derive(Debug, Clone)]
pub struct BackgroundModel {
    window: usize,
    dims: Option<(usize, usize)>,
    frames: VecDeque<Vec<u8>>,
    /// `window` slots per pixel; the first `frames.len()` are in ascending order.
    sorted: Vec<u8>,
}

impl Default for BackgroundModel {
    fn default() -> Self {
        BackgroundModel {
            window: DEFAULT_WINDOW,
            dims: None,
            frames: VecDeque::new(),
            sorted: Vec::new(),
        }
    }
}

impl BackgroundModel {
    pub fn new(window: usize) -> Result<Self, BackgroundError> {
        if window == 0 {
            return Err(BackgroundError::ZeroWindow);
        }
        Ok(BackgroundModel {
            window,
            dims: None,
            frames: VecDeque::with_capacity(window + 1),
            sorted: Vec::new(),
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dimensions(&self) -> Option<(usize, usize)> {
        self.dims
    }

    fn check_dims(&self, f: &Frame) -> Result<(), BackgroundError> {
        match self.dims {
            Some((w, h)) if (w, h) != (f.width(), f.height()) => {
                Err(BackgroundError::DimensionMismatch {
                    expected_w: w,
                    expected_h: h,
                    actual_w: f.width(),
                    actual_h: f.height(),
                })
            }
            _ => Ok(()),
        }
    }

    /// Appends a frame, evicting the oldest once the window is full.
    pub fn update(&mut self, f: &Frame) -> Result<(), BackgroundError> {
        f.require_gray()?;
        self.check_dims(f)?;
        let k = self.window;
        if self.dims.is_none() {
            self.dims = Some((f.width(), f.height()));
            self.sorted = vec![0; f.pixels().len() * k];
        }
        let evicted = if self.frames.len() == k {
            self.frames.pop_front()
        } else {
            None
        };
        let n = self.frames.len();
        for (i, &v) in f.pixels().iter().enumerate() {
            let slot = &mut self.sorted[i * k..(i + 1) * k];
            let mut len = n;
            if let Some(old) = &evicted {
                // n + 1 values are live while the old one is still present
                len += 1;
                let pos = slot[..len].partition_point(|&x| x < old[i]);
                slot.copy_within(pos + 1..len, pos);
                len -= 1;
            }
            let pos = slot[..len].partition_point(|&x| x < v);
            slot.copy_within(pos..len, pos + 1);
            slot[pos] = v;
        }
        self.frames.push_back(f.pixels().to_vec());
        Ok(())
    }

    /// Per-pixel median over the buffered frames (lower median for even counts).
    pub fn median_background(&self) -> Result<Frame, BackgroundError> {
        let (w, h) = self.dims.ok_or(BackgroundError::EmptyModel)?;
        if self.frames.is_empty() {
            return Err(BackgroundError::EmptyModel);
        }
        let rank = (self.frames.len() - 1) / 2;
        let out = self
            .sorted
            .chunks_exact(self.window)
            .map(|slot| slot[rank])
            .collect();
        Ok(Frame::gray(w, h, out)?)
    }

    /// Foreground where `|frame - median| > diff_threshold`.
    pub fn foreground_mask(
        &self,
        f: &Frame,
        diff_threshold: u8,
    ) -> Result<ForegroundMask, BackgroundError> {
        f.require_gray()?;
        self.check_dims(f)?;
        let bg = self.median_background()?;
        Ok(mask_against(&bg, f, diff_threshold))
    }
}

/// Foreground mask of `f` against a fixed background frame of the same size.
pub fn mask_against(background: &Frame, f: &Frame, diff_threshold: u8) -> ForegroundMask {
    let bits = background
        .pixels()
        .iter()
        .zip(f.pixels())
        .map(|(&b, &v)| b.abs_diff(v) > diff_threshold)
        .collect();
    ForegroundMask {
        width: f.width(),
        height: f.height(),
        bits,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForegroundMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl ForegroundMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Option<Self> {
        (bits.len() == width * height).then_some(ForegroundMask {
            width,
            height,
            bits,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        ForegroundMask {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_all_false(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Renders the mask as a 0/255 grayscale frame.
    pub fn to_frame(&self) -> Frame {
        let px = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        Frame::gray(self.width, self.height, px).expect("mask dimensions are non-zero")
    }
}

/// Anything that turns a frame into a foreground mask.
pub trait Segmenter {
    fn segment(&mut self, f: &Frame) -> Result<ForegroundMask, BackgroundError>;
}

/// Temporal-median segmenter: updates the model with each frame, then masks
/// the frame against the median. Returns an empty mask during warm-up.
#[derive(Debug, Clone)]
pub struct MedianSegmenter {
    pub model: BackgroundModel,
    pub diff_threshold: u8,
    pub warmup: usize,
}

impl MedianSegmenter {
    pub fn new(window: usize, diff_threshold: u8, warmup: usize) -> Result<Self, BackgroundError> {
        Ok(MedianSegmenter {
            model: BackgroundModel::new(window)?,
            diff_threshold,
            warmup,
        })
    }

    pub fn is_warm(&self) -> bool {
        self.model.len() >= self.warmup
    }
}

impl Default for MedianSegmenter {
    fn default() -> Self {
        MedianSegmenter {
            model: BackgroundModel::default(),
            diff_threshold: DEFAULT_DIFF_THRESHOLD,
            warmup: DEFAULT_WARMUP,
        }
    }
}

impl Segmenter for MedianSegmenter {
    fn segment(&mut self, f: &Frame) -> Result<ForegroundMask, BackgroundError> {
        self.model.update(f)?;
        if !self.is_warm() {
            return Ok(ForegroundMask::empty(f.width(), f.height()));
        }
        self.model.foreground_mask(f, self.diff_threshold)
    }
}

/// Tight boxes around 8-connected foreground components holding at least
/// `min_area` pixels, ordered by the first pixel reached in a row-major scan.
pub fn connected_components(mask: &ForegroundMask, min_area: usize) -> Vec<BoundingBox> {
    let (w, h) = (mask.width, mask.height);
    let mut visited = vec![false; w * h];
    let mut stack = Vec::new();
    let mut boxes = Vec::new();
    for start in 0..w * h {
        if !mask.bits[start] || visited[start] {
            continue;
        }
        visited[start] = true;
        stack.push(start);
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        let mut count = 0usize;
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            count += 1;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let j = ny * w + nx;
                    if mask.bits[j] && !visited[j] {
                        visited[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        if count >= min_area.max(1) {
            boxes.push(BoundingBox {
                x: x0 as f64,
                y: y0 as f64,
                w: (x1 - x0 + 1) as f64,
                h: (y1 - y0 + 1) as f64,
            });
        }
    }
    boxes
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(w: usize, h: usize, px: Vec<u8>) -> Frame {
        Frame::gray(w, h, px).unwrap()
    }

    #[test]
    fn update_grows_then_evicts() {
        let mut m = BackgroundModel::new(3).unwrap();
        m.update(&Frame::filled(4, 4, 1).unwrap()).unwrap();
        assert_eq!(m.len(), 1);
        for v in 2..=4 {
            m.update(&Frame::filled(4, 4, v).unwrap()).unwrap();
        }
        assert_eq!(m.len(), 3);
        // frames 2,3,4 remain -> median 3
        assert_eq!(m.median_background().unwrap().at(0, 0), 3);
        assert!(matches!(
            m.update(&Frame::filled(5, 4, 0).unwrap()),
            Err(BackgroundError::DimensionMismatch { .. })
        ));
    }

    proptest::proptest! {
        #[test]
        fn incremental_median_matches_sorting(values in proptest::collection::vec(0u8..=255, 1..60), window in 1usize..9) {
            let mut m = BackgroundModel::new(window).unwrap();
            for (t, &v) in values.iter().enumerate() {
                m.update(&frame(2, 1, vec![v, 255 - v])).unwrap();
                let lo = (t + 1).saturating_sub(window);
                let mut hist: Vec<u8> = values[lo..=t].to_vec();
                hist.sort_unstable();
                let bg = m.median_background().unwrap();
                proptest::prop_assert_eq!(bg.at(0, 0), hist[(hist.len() - 1) / 2]);
                let mut inv: Vec<u8> = hist.iter().map(|v| 255 - v).collect();
                inv.sort_unstable();
                proptest::prop_assert_eq!(bg.at(1, 0), inv[(inv.len() - 1) / 2]);
            }
        }
    }

    #[test]
    fn median_examples() {
        let mut m = BackgroundModel::new(5).unwrap();
        assert_eq!(m.median_background(), Err(BackgroundError::EmptyModel));
        for v in [10u8, 10, 200, 10, 10] {
            m.update(&frame(1, 1, vec![v])).unwrap();
        }
        assert_eq!(m.median_background().unwrap().at(0, 0), 10);

        let mut m = BackgroundModel::new(5).unwrap();
        m.update(&frame(1, 1, vec![7])).unwrap();
        m.update(&frame(1, 1, vec![5])).unwrap();
        assert_eq!(m.median_background().unwrap().at(0, 0), 5);
    }

    #[test]
    fn mask_examples() {
        let mut m = BackgroundModel::new(5).unwrap();
        let bg = Frame::filled(8, 8, 0).unwrap();
        for _ in 0..3 {
            m.update(&bg).unwrap();
        }
        assert!(m.foreground_mask(&bg, 30).unwrap().is_all_false());

        let mut blob = bg.clone();
        for y in 2..5 {
            for x in 3..6 {
                blob.set(x, y, 255);
            }
        }
        let mask = m.foreground_mask(&blob, 30).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(mask.get(x, y), (3..6).contains(&x) && (2..5).contains(&y));
            }
        }
        assert!(m.foreground_mask(&blob, 255).unwrap().is_all_false());
        assert_eq!(
            BackgroundModel::new(5).unwrap().foreground_mask(&bg, 30),
            Err(BackgroundError::EmptyModel)
        );
    }

    #[test]
    fn component_examples() {
        assert!(connected_components(&ForegroundMask::empty(6, 6), 1).is_empty());

        let mut mask = ForegroundMask::empty(10, 10);
        for y in 0..3 {
            for x in 0..3 {
                mask.set(x, y, true);
                mask.set(x + 6, y + 5, true);
            }
        }
        let boxes = connected_components(&mask, 1);
        assert_eq!(boxes.len(), 2);
        assert_eq!(
            boxes[0],
            BoundingBox {
                x: 0.0,
                y: 0.0,
                w: 3.0,
                h: 3.0
            }
        );
        assert_eq!(
            boxes[1],
            BoundingBox {
                x: 6.0,
                y: 5.0,
                w: 3.0,
                h: 3.0
            }
        );

        let mut single = ForegroundMask::empty(4, 4);
        single.set(1, 1, true);
        assert!(connected_components(&single, 2).is_empty());
        assert_eq!(connected_components(&single, 1).len(), 1);
    }

    #[test]
    fn diagonal_pixels_join_under_eight_connectivity() {
        let mut mask = ForegroundMask::empty(4, 4);
        mask.set(0, 0, true);
        mask.set(1, 1, true);
        mask.set(2, 2, true);
        let boxes = connected_components(&mask, 1);
        assert_eq!(
            boxes,
            vec![BoundingBox {
                x: 0.0,
                y: 0.0,
                w: 3.0,
                h: 3.0
            }]
        );
    }

    #[test]
    fn segmenter_is_silent_during_warmup() {
        let mut seg = MedianSegmenter::new(25, 30, 5).unwrap();
        let mut f = Frame::filled(6, 6, 0).unwrap();
        f.set(2, 2, 255);
        for _ in 0..4 {
            assert!(seg
                .segment(&Frame::filled(6, 6, 0).unwrap())
                .unwrap()
                .is_all_false());
        }
        assert_eq!(seg.segment(&f).unwrap().count(), 1);
    }
}
