//! Per-frame enhancement: brightness gate, night-vision grayscale, median
//! denoising, percentile contrast stretch and classical super-resolution.

use serde::{Deserialize, Serialize};

use crate::frame::{Channels, Frame, FrameError};

/// Gamma used by the night-vision boost.
pub const NIGHT_GAMMA: f64 = 0.5;

#[inline]
fn luma(r: u8, g: u8, b: u8) -> f64 {
    0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64
}

fn luma_plane(f: &Frame) -> Vec<f64> {
    match f.channels() {
        Channels::Gray8 => f.pixels().iter().map(|&v| v as f64).collect(),
        Channels::Rgba8 => f
            .pixels()
            .chunks_exact(4)
            .map(|p| luma(p[0], p[1], p[2]))
            .collect(),
    }
}

/// Mean luma over all pixels, normalized to `[0, 1]`. The alpha channel is ignored.
pub fn mean_brightness(f: &Frame) -> f64 {
    let plane = luma_plane(f);
    let sum: f64 = plane.iter().sum();
    (sum / (plane.len() as f64 * 255.0)).clamp(0.0, 1.0)
}

/// Luma conversion followed by a gamma boost: `round(255 * (luma / 255)^0.5)`.
pub fn nightvision_grayscale(f: &Frame) -> Frame {
    let lut_gray: Vec<u8> = (0..=255u32).map(|v| gamma_boost(v as f64)).collect();
    let out = match f.channels() {
        Channels::Gray8 => f.pixels().iter().map(|&v| lut_gray[v as usize]).collect(),
        Channels::Rgba8 => f
            .pixels()
            .chunks_exact(4)
            .map(|p| gamma_boost(luma(p[0], p[1], p[2])))
            .collect(),
    };
    f.derive(f.width(), f.height(), Channels::Gray8, out)
}

#[inline]
fn gamma_boost(l: f64) -> u8 {
    (255.0 * (l / 255.0).powf(NIGHT_GAMMA))
        .round()
        .clamp(0.0, 255.0) as u8
}

/// Median filter over the `(2r+1)^2` neighbourhood with edge replication.
pub fn denoise_median(f: &Frame, radius: usize) -> Result<Frame, FrameError> {
    f.require_gray()?;
    if radius == 0 {
        return Ok(f.clone());
    }
    let (w, h) = (f.width(), f.height());
    if radius == 1 && w >= 3 && h >= 3 {
        return Ok(f.derive(w, h, Channels::Gray8, median3x3(f.pixels(), w, h)));
    }
    let r = radius as isize;
    let side = 2 * radius + 1;
    let mid = side * side / 2;
    let src = f.pixels();
    let mut out = vec![0u8; w * h];
    let mut window = Vec::with_capacity(side * side);
    for y in 0..h {
        for x in 0..w {
            window.clear();
            for dy in -r..=r {
                let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                let row = &src[yy * w..(yy + 1) * w];
                for dx in -r..=r {
                    let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    window.push(row[xx]);
                }
            }
            let (_, m, _) = window.select_nth_unstable(mid);
            out[y * w + x] = *m;
        }
    }
    Ok(f.derive(w, h, Channels::Gray8, out))
}

#[inline(always)]
fn sort2(a: &mut u8, b: &mut u8) {
    let (lo, hi) = ((*a).min(*b), (*a).max(*b));
    *a = lo;
    *b = hi;
}

/// Median of nine via the classic 19-exchange network.
#[inline(always)]
fn median9(mut p: [u8; 9]) -> u8 {
    let [p0, p1, p2, p3, p4, p5, p6, p7, p8] = &mut p;
    sort2(p1, p2);
    sort2(p4, p5);
    sort2(p7, p8);
    sort2(p0, p1);
    sort2(p3, p4);
    sort2(p6, p7);
    sort2(p1, p2);
    sort2(p4, p5);
    sort2(p7, p8);
    sort2(p0, p3);
    sort2(p5, p8);
    sort2(p4, p7);
    sort2(p3, p6);
    sort2(p1, p4);
    sort2(p2, p5);
    sort2(p4, p7);
    sort2(p4, p2);
    sort2(p6, p4);
    sort2(p4, p2);
    *p4
}

fn median3x3(src: &[u8], w: usize, h: usize) -> Vec<u8> {
    let mut out = vec![0u8; w * h];
    for y in 0..h {
        let rows = [y.saturating_sub(1), y, (y + 1).min(h - 1)].map(|r| &src[r * w..(r + 1) * w]);
        for x in 0..w {
            let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
            out[y * w + x] = median9([
                rows[0][xl],
                rows[0][x],
                rows[0][xr],
                rows[1][xl],
                rows[1][x],
                rows[1][xr],
                rows[2][xl],
                rows[2][x],
                rows[2][xr],
            ]);
        }
    }
    out
}

/// Sample value at the given percentile (nearest rank over the sorted samples).
pub fn percentile_value(f: &Frame, pct: f64) -> u8 {
    let mut hist = [0usize; 256];
    for &v in f.pixels() {
        hist[v as usize] += 1;
    }
    let n = f.pixels().len();
    let rank = ((pct.clamp(0.0, 100.0) / 100.0) * (n - 1) as f64).round() as usize;
    let mut seen = 0usize;
    for (v, &count) in hist.iter().enumerate() {
        seen += count;
        if seen > rank {
            return v as u8;
        }
    }
    255
}

/// Linear contrast stretch sending the `low_pct` percentile to 0 and the
/// `high_pct` percentile to 255. Returns the frame unchanged when the two
/// percentile values coincide.
pub fn dehaze_stretch(f: &Frame, low_pct: f64, high_pct: f64) -> Result<Frame, FrameError> {
    f.require_gray()?;
    let lo = percentile_value(f, low_pct);
    let hi = percentile_value(f, high_pct.max(low_pct));
    if hi <= lo {
        return Ok(f.clone());
    }
    let span = (hi - lo) as f64;
    let lut: Vec<u8> = (0..=255u32)
        .map(|v| {
            ((v as f64 - lo as f64) * 255.0 / span)
                .round()
                .clamp(0.0, 255.0) as u8
        })
        .collect();
    let out = f.pixels().iter().map(|&v| lut[v as usize]).collect();
    Ok(f.derive(f.width(), f.height(), Channels::Gray8, out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum ResampleMethod {
    Nearest,
    Bilinear,
    #[default]
    Lanczos3,
}

impl ResampleMethod {
    fn support(self) -> f64 {
        match self {
            ResampleMethod::Nearest => 0.5,
            ResampleMethod::Bilinear => 1.0,
            ResampleMethod::Lanczos3 => 3.0,
        }
    }

    fn kernel(self, t: f64) -> f64 {
        let t = t.abs();
        match self {
            ResampleMethod::Nearest => (t < 0.5) as u8 as f64,
            ResampleMethod::Bilinear => (1.0 - t).max(0.0),
            ResampleMethod::Lanczos3 => {
                if t < 1e-12 {
                    1.0
                } else if t < 3.0 {
                    let px = std::f64::consts::PI * t;
                    3.0 * px.sin() * (px / 3.0).sin() / (px * px)
                } else {
                    0.0
                }
            }
        }
    }
}

/// Per-output-sample list of `(source index, weight)` taps, weights summing to one.
fn taps(src_len: usize, factor: usize, method: ResampleMethod) -> Vec<Vec<(usize, f64)>> {
    let dst_len = src_len * factor;
    let support = method.support();
    (0..dst_len)
        .map(|d| {
            let center = (d as f64 + 0.5) / factor as f64 - 0.5;
            let lo = (center - support).floor() as isize;
            let hi = (center + support).ceil() as isize;
            let mut taps: Vec<(usize, f64)> = (lo..=hi)
                .filter_map(|s| {
                    let wgt = method.kernel(s as f64 - center);
                    (wgt != 0.0).then(|| (s.clamp(0, src_len as isize - 1) as usize, wgt))
                })
                .collect();
            let total: f64 = taps.iter().map(|t| t.1).sum();
            for t in &mut taps {
                t.1 /= total;
            }
            taps
        })
        .collect()
}

/// Upscales by an integer factor. Factor 1 returns an identical frame.
pub fn upscale(f: &Frame, factor: usize, method: ResampleMethod) -> Frame {
    let factor = factor.max(1);
    if factor == 1 {
        return f.clone();
    }
    let (w, h, c) = (f.width(), f.height(), f.channels().count());
    let (ow, oh) = (w * factor, h * factor);
    let src = f.pixels();
    if method == ResampleMethod::Nearest {
        let mut out = Vec::with_capacity(ow * oh * c);
        for y in 0..oh {
            let row = &src[(y / factor) * w * c..(y / factor + 1) * w * c];
            for x in 0..ow {
                let s = (x / factor) * c;
                out.extend_from_slice(&row[s..s + c]);
            }
        }
        return f.derive(ow, oh, f.channels(), out);
    }

    let htaps = taps(w, factor, method);
    let vtaps = taps(h, factor, method);
    // horizontal pass: h rows of ow samples
    let mut tmp = vec![0f64; ow * h * c];
    for y in 0..h {
        let row = &src[y * w * c..(y + 1) * w * c];
        for (x, tx) in htaps.iter().enumerate() {
            for ch in 0..c {
                tmp[(y * ow + x) * c + ch] = tx
                    .iter()
                    .map(|&(s, wgt)| row[s * c + ch] as f64 * wgt)
                    .sum();
            }
        }
    }
    let mut out = vec![0u8; ow * oh * c];
    for (y, ty) in vtaps.iter().enumerate() {
        for x in 0..ow {
            for ch in 0..c {
                let v: f64 = ty
                    .iter()
                    .map(|&(s, wgt)| tmp[(s * ow + x) * c + ch] * wgt)
                    .sum();
                out[(y * ow + x) * c + ch] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    f.derive(ow, oh, f.channels(), out)
}

/// Super-resolution stage: maps a frame to one scaled by [`Enhancer::factor`].
pub trait Enhancer: Send + Sync {
    fn factor(&self) -> usize;
    fn enhance(&self, f: &Frame) -> Frame;
}

/// Interpolating upscaler used as the default enhancer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassicalUpscaler {
    pub factor: usize,
    pub method: ResampleMethod,
}

impl Default for ClassicalUpscaler {
    fn default() -> Self {
        ClassicalUpscaler {
            factor: 2,
            method: ResampleMethod::Lanczos3,
        }
    }
}

impl Enhancer for ClassicalUpscaler {
    fn factor(&self) -> usize {
        self.factor.max(1)
    }

    fn enhance(&self, f: &Frame) -> Frame {
        upscale(f, self.factor, self.method)
    }
}
