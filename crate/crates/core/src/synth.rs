//! Ground-truthed synthetic scenes and geometric/photometric augmentation.
//!
//! Objects are fixed procedural silhouettes: a plus-shaped quadcopter with a
//! rotor disc on each arm, a bird made of two flapping wing ellipses around a
//! small body, and an elongated plane with a tail fin. Annotation boxes are
//! the tight bounds of the rendered (in-frame) pixels, captured before noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{Channels, Frame, FrameError};
use crate::geometry::{box_area, box_intersection, BoundingBox};

/// Minimum object size in pixels.
pub const MIN_OBJECT_SIZE: f64 = 4.0;
/// Minimum contrast between an object and the background mean.
pub const MIN_CONTRAST: f64 = 40.0;
/// Crops keep a box only if at least this fraction of its area survives.
pub const CROP_KEEP_FRACTION: f64 = 0.25;
const WING_PERIOD_FRAMES: f64 = 8.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("object {index} does not fit inside the {width}x{height} frame when it appears")]
    ObjectOutOfFrame {
        index: usize,
        width: usize,
        height: usize,
    },
    #[error("invalid augmentation: {0}")]
    InvalidAugmentation(String),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectKind {
    Drone,
    Bird,
    Plane,
}

impl ObjectKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ObjectKind::Drone => "drone",
            ObjectKind::Bird => "bird",
            ObjectKind::Plane => "plane",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "drone" => Some(ObjectKind::Drone),
            "bird" => Some(ObjectKind::Bird),
            "plane" => Some(ObjectKind::Plane),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Background {
    Flat(u8),
    /// Vertical ramp from `top` (first row) to `bottom` (last row).
    Gradient {
        top: u8,
        bottom: u8,
    },
    /// Flat level with a static per-pixel texture of standard deviation `sigma`.
    NoisyFlat {
        gray: u8,
        sigma: f64,
    },
}

impl Background {
    pub fn mean(&self) -> f64 {
        match *self {
            Background::Flat(g) => g as f64,
            Background::Gradient { top, bottom } => (top as f64 + bottom as f64) / 2.0,
            Background::NoisyFlat { gray, .. } => gray as f64,
        }
    }

    fn render(&self, width: usize, height: usize, seed: u64) -> Vec<f64> {
        match *self {
            Background::Flat(g) => vec![g as f64; width * height],
            Background::Gradient { top, bottom } => (0..height)
                .flat_map(|y| {
                    let t = if height > 1 {
                        y as f64 / (height - 1) as f64
                    } else {
                        0.0
                    };
                    std::iter::repeat_n(top as f64 + t * (bottom as f64 - top as f64), width)
                })
                .collect(),
            Background::NoisyFlat { gray, sigma } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(u64::MAX);
                let normal = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
                (0..width * height)
                    .map(|_| gray as f64 + normal.sample(&mut rng))
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub kind: ObjectKind,
    /// Extent of the silhouette's longer side, in pixels.
    pub size: f64,
    /// Centre position on the frame the object appears.
    pub start: (f64, f64),
    /// Displacement per frame.
    pub velocity: (f64, f64),
    pub intensity: u8,
    /// First frame on which the object is present.
    #[serde(default)]
    pub appear_frame: u32,
}

impl ObjectSpec {
    pub fn center_at(&self, frame: u32) -> Option<(f64, f64)> {
        (frame >= self.appear_frame).then(|| {
            let dt = (frame - self.appear_frame) as f64;
            (
                self.start.0 + self.velocity.0 * dt,
                self.start.1 + self.velocity.1 * dt,
            )
        })
    }
}

fn default_fps() -> f64 {
    25.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub frame_count: u32,
    pub background: Background,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
    /// Per-frame Gaussian pixel noise, in gray levels.
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_fps")]
    pub fps: f64,
}

impl SceneConfig {
    pub fn new(width: usize, height: usize, frame_count: u32, background: Background) -> Self {
        SceneConfig {
            width,
            height,
            frame_count,
            background,
            objects: Vec::new(),
            noise_sigma: 0.0,
            seed: 0,
            fps: 25.0,
        }
    }

    pub fn with_object(mut self, o: ObjectSpec) -> Self {
        self.objects.push(o);
        self
    }

    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.noise_sigma = sigma;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidScene(m));
        if self.width == 0 || self.height == 0 {
            return bad(format!(
                "frame size {}x{} is empty",
                self.width, self.height
            ));
        }
        if self.frame_count == 0 {
            return bad("frame_count must be at least 1".into());
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad(format!(
                "noise_sigma {} must be finite and non-negative",
                self.noise_sigma
            ));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return bad(format!("fps {} must be positive", self.fps));
        }
        if let Background::NoisyFlat { sigma, .. } = self.background {
            if !(sigma.is_finite() && sigma >= 0.0) {
                return bad(format!(
                    "background sigma {sigma} must be finite and non-negative"
                ));
            }
        }
        let bg = self.background.mean();
        for (index, o) in self.objects.iter().enumerate() {
            if !(o.size.is_finite() && o.size >= MIN_OBJECT_SIZE) {
                return bad(format!(
                    "object {index}: size {} is below {MIN_OBJECT_SIZE}",
                    o.size
                ));
            }
            if (o.intensity as f64 - bg).abs() < MIN_CONTRAST {
                return bad(format!(
                    "object {index}: intensity {} is within {MIN_CONTRAST} gray levels of the background mean {bg}",
                    o.intensity
                ));
            }
            let (cx, cy) = o.start;
            let half = o.size / 2.0;
            if !(cx - half >= 0.0
                && cy - half >= 0.0
                && cx + half <= self.width as f64
                && cy + half <= self.height as f64)
            {
                return Err(SynthError::ObjectOutOfFrame {
                    index,
                    width: self.width,
                    height: self.height,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub kind: ObjectKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedSequence {
    pub frames: Vec<Frame>,
    pub annotations: Vec<Vec<Annotation>>,
    pub seed: Option<u64>,
}

impl AnnotatedSequence {
    pub fn dimensions(&self) -> Option<(usize, usize)> {
        self.frames.first().map(|f| (f.width(), f.height()))
    }

    pub fn boxes_of(&self, frame: usize, kind: Option<ObjectKind>) -> Vec<BoundingBox> {
        self.annotations[frame]
            .iter()
            .filter(|a| kind.is_none_or(|k| a.kind == k))
            .map(|a| a.bbox)
            .collect()
    }
}

#[inline]
fn in_ellipse(dx: f64, dy: f64, a: f64, b: f64) -> bool {
    (dx / a).powi(2) + (dy / b).powi(2) <= 1.0
}

/// Whether the point at offset `(dx, dy)` from the object's centre is inside its silhouette.
fn covers(kind: ObjectKind, s: f64, phase: f64, dx: f64, dy: f64) -> bool {
    let half = s / 2.0;
    if dx.abs() > half || dy.abs() > half {
        return false;
    }
    match kind {
        ObjectKind::Drone => {
            let arm = (s / 8.0).max(1.0);
            let rotor = s / 6.0;
            let on_arm =
                (dy.abs() <= arm && dx.abs() <= half) || (dx.abs() <= arm && dy.abs() <= half);
            let hub = s / 3.0;
            let on_rotor = [(hub, 0.0), (-hub, 0.0), (0.0, hub), (0.0, -hub)]
                .iter()
                .any(|&(rx, ry)| in_ellipse(dx - rx, dy - ry, rotor, rotor));
            on_arm || on_rotor
        }
        ObjectKind::Bird => {
            let lift = (s / 8.0) * phase.sin();
            let wing_a = s / 4.0;
            let wing_b = (s / 10.0).max(0.75);
            let body = (s / 10.0).max(0.75);
            in_ellipse(dx - wing_a, dy + lift, wing_a, wing_b)
                || in_ellipse(dx + wing_a, dy + lift, wing_a, wing_b)
                || in_ellipse(dx, dy, body, body)
        }
        ObjectKind::Plane => {
            let fuselage = (s / 12.0).max(0.75);
            let on_body = dy.abs() <= fuselage;
            let tail = dx <= -half + s / 8.0 && dy <= 0.0 && dy >= -s / 5.0;
            on_body || tail
        }
    }
}

/// Pixels covered by an object centred at `(cx, cy)`, restricted to the frame.
pub fn rasterize(
    kind: ObjectKind,
    size: f64,
    phase: f64,
    (cx, cy): (f64, f64),
    width: usize,
    height: usize,
) -> Vec<(usize, usize)> {
    let half = size / 2.0 + 1.0;
    let x0 = (cx - half).floor().max(0.0) as usize;
    let y0 = (cy - half).floor().max(0.0) as usize;
    let x1 = ((cx + half).ceil().max(0.0) as usize).min(width);
    let y1 = ((cy + half).ceil().max(0.0) as usize).min(height);
    let mut out = Vec::new();
    for y in y0..y1 {
        for x in x0..x1 {
            if covers(kind, size, phase, x as f64 + 0.5 - cx, y as f64 + 0.5 - cy) {
                out.push((x, y));
            }
        }
    }
    out
}

fn tight_box(pixels: &[(usize, usize)]) -> Option<BoundingBox> {
    let x0 = pixels.iter().map(|p| p.0).min()?;
    let y0 = pixels.iter().map(|p| p.1).min()?;
    let x1 = pixels.iter().map(|p| p.0).max()?;
    let y1 = pixels.iter().map(|p| p.1).max()?;
    Some(BoundingBox {
        x: x0 as f64,
        y: y0 as f64,
        w: (x1 - x0 + 1) as f64,
        h: (y1 - y0 + 1) as f64,
    })
}

fn wing_phase(seed: u64, object: usize, frame: u32) -> f64 {
    let offset =
        ((seed ^ (object as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)) % 1000) as f64 / 1000.0;
    std::f64::consts::TAU * (frame as f64 / WING_PERIOD_FRAMES + offset)
}

fn add_noise(plane: &mut [f64], sigma: f64, rng: &mut ChaCha8Rng) {
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).expect("finite sigma");
        for v in plane.iter_mut() {
            *v += normal.sample(rng);
        }
    }
}

fn quantize(plane: &[f64]) -> Vec<u8> {
    plane
        .iter()
        .map(|v| v.round().clamp(0.0, 255.0) as u8)
        .collect()
}

/// Renders every frame of the scene. Deterministic in `cfg.seed`; each
/// frame draws its noise from its own stream, so frames render independently.
pub fn render_sequence(cfg: &SceneConfig) -> Result<AnnotatedSequence, SynthError> {
    cfg.validate()?;
    let (w, h) = (cfg.width, cfg.height);
    let background = cfg.background.render(w, h, cfg.seed);
    let rendered: Vec<(Frame, Vec<Annotation>)> = (0..cfg.frame_count)
        .into_par_iter()
        .map(|t| {
            let mut plane = background.clone();
            let mut annotations = Vec::new();
            for (i, o) in cfg.objects.iter().enumerate() {
                let Some(center) = o.center_at(t) else {
                    continue;
                };
                let pixels = rasterize(o.kind, o.size, wing_phase(cfg.seed, i, t), center, w, h);
                for &(x, y) in &pixels {
                    plane[y * w + x] = o.intensity as f64;
                }
                if let Some(bbox) = tight_box(&pixels) {
                    annotations.push(Annotation { bbox, kind: o.kind });
                }
            }
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(t as u64);
            add_noise(&mut plane, cfg.noise_sigma, &mut rng);
            let frame = Frame::gray(w, h, quantize(&plane))
                .and_then(|f| f.with_index(t as u64, t as f64 / cfg.fps))
                .expect("validated dimensions");
            (frame, annotations)
        })
        .collect();
    let (frames, annotations) = rendered.into_iter().unzip();
    Ok(AnnotatedSequence {
        frames,
        annotations,
        seed: Some(cfg.seed),
    })
}

/// A single object rendered near the centre of a small square canvas, with
/// its tight box. Size, position jitter and wing phase are drawn from `rng`.
pub fn render_patch(
    kind: ObjectKind,
    background: u8,
    intensity: u8,
    noise_sigma: f64,
    size_range: (f64, f64),
    rng: &mut impl Rng,
) -> (Frame, BoundingBox) {
    let size = rng
        .random_range(size_range.0..=size_range.1)
        .max(MIN_OBJECT_SIZE);
    let canvas = (size * 2.0).ceil() as usize + 4;
    let jitter = size / 4.0;
    let cx = canvas as f64 / 2.0 + rng.random_range(-jitter..=jitter);
    let cy = canvas as f64 / 2.0 + rng.random_range(-jitter..=jitter);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let mut plane = vec![background as f64; canvas * canvas];
    let pixels = rasterize(kind, size, phase, (cx, cy), canvas, canvas);
    for &(x, y) in &pixels {
        plane[y * canvas + x] = intensity as f64;
    }
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma).expect("finite sigma");
        for v in plane.iter_mut() {
            *v += normal.sample(rng);
        }
    }
    let frame = Frame::gray(canvas, canvas, quantize(&plane)).expect("non-empty canvas");
    (frame, tight_box(&pixels).expect("object inside canvas"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AugmentOp {
    FlipH,
    FlipV,
    Rotate90,
    Rotate180,
    Rotate270,
    Scale(f64),
    Crop(BoundingBox),
    Brightness(i16),
    GaussianNoise { sigma: f64, seed: u64 },
}

/// Bilinear resize with pixel-centre alignment, so that a point at continuous
/// coordinate `x` maps to `x * new_w / w`.
pub fn resize_bilinear(f: &Frame, new_w: usize, new_h: usize) -> Frame {
    let (w, h, c) = (f.width(), f.height(), f.channels().count());
    let src = f.pixels();
    let (sx, sy) = (w as f64 / new_w as f64, h as f64 / new_h as f64);
    let mut out = vec![0u8; new_w * new_h * c];
    for y in 0..new_h {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = fy - y0 as f64;
        for x in 0..new_w {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = fx - x0 as f64;
            for ch in 0..c {
                let p = |xx: usize, yy: usize| src[(yy * w + xx) * c + ch] as f64;
                let v = (1.0 - ty) * ((1.0 - tx) * p(x0, y0) + tx * p(x1, y0))
                    + ty * ((1.0 - tx) * p(x0, y1) + tx * p(x1, y1));
                out[(y * new_w + x) * c + ch] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    f.derive(new_w, new_h, f.channels(), out)
}

fn map_boxes(anns: &[Annotation], f: impl Fn(&BoundingBox) -> BoundingBox) -> Vec<Annotation> {
    anns.iter()
        .map(|a| Annotation {
            bbox: f(&a.bbox),
            kind: a.kind,
        })
        .collect()
}

/// Applies one augmentation to an image and its boxes. Geometric operations
/// move the boxes by the same map as the pixels.
pub fn augment(
    f: &Frame,
    anns: &[Annotation],
    op: AugmentOp,
) -> Result<(Frame, Vec<Annotation>), SynthError> {
    let (w, h) = (f.width() as f64, f.height() as f64);
    Ok(match op {
        AugmentOp::FlipH => (
            f.flip_horizontal(),
            map_boxes(anns, |b| BoundingBox {
                x: w - b.x - b.w,
                ..*b
            }),
        ),
        AugmentOp::FlipV => (
            f.flip_vertical(),
            map_boxes(anns, |b| BoundingBox {
                y: h - b.y - b.h,
                ..*b
            }),
        ),
        AugmentOp::Rotate90 => (
            f.rotate90(),
            map_boxes(anns, |b| BoundingBox {
                x: h - b.y - b.h,
                y: b.x,
                w: b.h,
                h: b.w,
            }),
        ),
        AugmentOp::Rotate180 => {
            let (g, a) = augment(f, anns, AugmentOp::FlipH)?;
            augment(&g, &a, AugmentOp::FlipV)?
        }
        AugmentOp::Rotate270 => {
            let (g, a) = augment(f, anns, AugmentOp::Rotate180)?;
            augment(&g, &a, AugmentOp::Rotate90)?
        }
        AugmentOp::Scale(factor) => {
            if !(factor.is_finite() && factor > 0.0) {
                return Err(SynthError::InvalidAugmentation(format!(
                    "scale factor {factor} must be positive"
                )));
            }
            let nw = ((w * factor).round() as usize).max(1);
            let nh = ((h * factor).round() as usize).max(1);
            let (sx, sy) = (nw as f64 / w, nh as f64 / h);
            let boxes = map_boxes(anns, |b| BoundingBox {
                x: b.x * sx,
                y: b.y * sy,
                w: b.w * sx,
                h: b.h * sy,
            });
            (resize_bilinear(f, nw, nh), boxes)
        }
        AugmentOp::Crop(region) => {
            let (rx, ry, rw, rh) = (region.x, region.y, region.w, region.h);
            let integral = [rx, ry, rw, rh].iter().all(|v| v.fract() == 0.0);
            if !(region.is_valid()
                && integral
                && rx >= 0.0
                && ry >= 0.0
                && rx + rw <= w
                && ry + rh <= h)
            {
                return Err(SynthError::InvalidAugmentation(format!(
                    "crop region {region:?} is not an integer region inside the {w}x{h} image"
                )));
            }
            let (x0, y0, cw, ch) = (rx as usize, ry as usize, rw as usize, rh as usize);
            let c = f.channels().count();
            let mut px = Vec::with_capacity(cw * ch * c);
            for y in y0..y0 + ch {
                let start = (y * f.width() + x0) * c;
                px.extend_from_slice(&f.pixels()[start..start + cw * c]);
            }
            let kept = anns
                .iter()
                .filter_map(|a| {
                    let clipped = box_intersection(&a.bbox, &region)?;
                    (box_area(&clipped) >= CROP_KEEP_FRACTION * box_area(&a.bbox)).then(|| {
                        Annotation {
                            bbox: clipped.translate(-rx, -ry),
                            kind: a.kind,
                        }
                    })
                })
                .collect();
            (f.derive(cw, ch, f.channels(), px), kept)
        }
        AugmentOp::Brightness(delta) => {
            let px = map_samples(f, |v| (v as i16 + delta).clamp(0, 255) as u8);
            (
                f.derive(f.width(), f.height(), f.channels(), px),
                anns.to_vec(),
            )
        }
        AugmentOp::GaussianNoise { sigma, seed } => {
            if !(sigma.is_finite() && sigma >= 0.0) {
                return Err(SynthError::InvalidAugmentation(format!(
                    "noise sigma {sigma} must be non-negative"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let px = if sigma == 0.0 {
                f.pixels().to_vec()
            } else {
                let normal = Normal::new(0.0, sigma).expect("finite sigma");
                map_samples(f, |v| {
                    (v as f64 + normal.sample(&mut rng))
                        .round()
                        .clamp(0.0, 255.0) as u8
                })
            };
            (
                f.derive(f.width(), f.height(), f.channels(), px),
                anns.to_vec(),
            )
        }
    })
}

/// Maps colour samples, leaving alpha untouched on RGBA frames.
fn map_samples(f: &Frame, mut g: impl FnMut(u8) -> u8) -> Vec<u8> {
    match f.channels() {
        Channels::Gray8 => f.pixels().iter().map(|&v| g(v)).collect(),
        Channels::Rgba8 => f
            .pixels()
            .chunks_exact(4)
            .flat_map(|p| [g(p[0]), g(p[1]), g(p[2]), p[3]])
            .collect(),
    }
}

/// Ready-made dark scenes used by the examples and the end-to-end tests.
pub mod presets {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::{Background, ObjectKind, ObjectSpec, SceneConfig};

    pub const WIDTH: usize = 192;
    pub const HEIGHT: usize = 144;
    /// Gray level of every preset object.
    pub const INTENSITY: u8 = 200;

    /// Dark vertical gradient with light sensor noise.
    pub fn night_sky(frame_count: u32, seed: u64) -> SceneConfig {
        SceneConfig::new(
            WIDTH,
            HEIGHT,
            frame_count,
            Background::Gradient {
                top: 15,
                bottom: 45,
            },
        )
        .with_noise(2.0)
        .with_seed(seed)
    }

    pub fn object(
        kind: ObjectKind,
        size: f64,
        start: (f64, f64),
        velocity: (f64, f64),
        appear_frame: u32,
    ) -> ObjectSpec {
        ObjectSpec {
            kind,
            size,
            start,
            velocity,
            intensity: INTENSITY,
            appear_frame,
        }
    }

    /// 300 frames; a single drone enters at frame 40 and crosses the scene.
    pub fn drone_flyby(seed: u64) -> SceneConfig {
        night_sky(300, seed).with_object(object(
            ObjectKind::Drone,
            10.0,
            (12.0, 40.0),
            (1.0, 0.25),
            40,
        ))
    }

    /// 300 frames with two birds and no drone.
    pub fn birds_only(seed: u64) -> SceneConfig {
        night_sky(300, seed)
            .with_object(object(ObjectKind::Bird, 14.0, (20.0, 30.0), (1.1, 0.2), 0))
            .with_object(object(
                ObjectKind::Bird,
                12.0,
                (170.0, 100.0),
                (-0.9, -0.1),
                60,
            ))
    }

    /// A mixed training scene: two drones, two birds and a plane with sizes,
    /// headings, speeds and entry frames drawn from `seed`.
    pub fn training_mix(frame_count: u32, seed: u64) -> SceneConfig {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut scene = night_sky(frame_count, seed);
        let kinds = [
            (ObjectKind::Drone, 8.0, 14.0),
            (ObjectKind::Drone, 8.0, 14.0),
            (ObjectKind::Bird, 10.0, 18.0),
            (ObjectKind::Bird, 10.0, 18.0),
            (ObjectKind::Plane, 12.0, 22.0),
        ];
        for (kind, lo, hi) in kinds {
            let size: f64 = rng.random_range(lo..=hi);
            let margin = size / 2.0 + 1.0;
            let start = (
                rng.random_range(margin..WIDTH as f64 - margin),
                rng.random_range(margin..HEIGHT as f64 - margin),
            );
            let heading = rng.random_range(0.0..std::f64::consts::TAU);
            let speed = rng.random_range(0.9..1.6);
            let appear = rng.random_range(0..frame_count / 3);
            scene = scene.with_object(object(
                kind,
                size,
                start,
                (speed * heading.cos(), speed * heading.sin()),
                appear,
            ));
        }
        scene
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::iou;
    use crate::preprocess::mean_brightness;
    use proptest::prelude::*;

    fn drone(start: (f64, f64), velocity: (f64, f64)) -> ObjectSpec {
        ObjectSpec {
            kind: ObjectKind::Drone,
            size: 10.0,
            start,
            velocity,
            intensity: 200,
            appear_frame: 0,
        }
    }

    #[test]
    fn empty_black_scene() {
        let seq = render_sequence(&SceneConfig::new(16, 12, 3, Background::Flat(0))).unwrap();
        assert_eq!(seq.frames.len(), 3);
        assert!(seq
            .frames
            .iter()
            .all(|f| f.pixels().iter().all(|&v| v == 0)));
        assert!(seq.annotations.iter().all(|a| a.is_empty()));
    }

    #[test]
    fn static_drone_keeps_its_box() {
        let cfg = SceneConfig::new(64, 48, 5, Background::Flat(20))
            .with_object(drone((32.0, 24.0), (0.0, 0.0)));
        let seq = render_sequence(&cfg).unwrap();
        let first = seq.annotations[0][0];
        assert!(seq
            .annotations
            .iter()
            .all(|a| a.len() == 1 && a[0] == first));
        assert_eq!(first.kind, ObjectKind::Drone);
    }

    #[test]
    fn moving_drone_box_follows_arithmetic_sequence() {
        let cfg = SceneConfig::new(80, 40, 10, Background::Flat(20))
            .with_object(drone((10.0, 20.0), (2.0, 0.0)));
        let seq = render_sequence(&cfg).unwrap();
        let x0 = seq.annotations[0][0].bbox.x;
        for (t, a) in seq.annotations.iter().enumerate() {
            assert_eq!(a[0].bbox.x, x0 + 2.0 * t as f64);
        }
    }

    #[test]
    fn delayed_object_appears_on_its_frame() {
        let mut o = drone((20.0, 20.0), (1.0, 0.0));
        o.appear_frame = 3;
        let seq = render_sequence(&SceneConfig::new(60, 40, 6, Background::Flat(0)).with_object(o))
            .unwrap();
        assert!(seq.annotations[..3].iter().all(|a| a.is_empty()));
        assert_eq!(seq.annotations[3].len(), 1);
        assert_eq!(
            seq.annotations[3][0].bbox,
            seq.annotations[4][0].bbox.translate(-1.0, 0.0)
        );
    }

    #[test]
    fn scene_validation() {
        let base = SceneConfig::new(40, 40, 2, Background::Flat(100));
        let out = base.clone().with_object(drone((2.0, 20.0), (0.0, 0.0)));
        assert!(matches!(
            render_sequence(&out),
            Err(SynthError::ObjectOutOfFrame { index: 0, .. })
        ));
        let mut dim = drone((20.0, 20.0), (0.0, 0.0));
        dim.intensity = 120;
        assert!(matches!(
            render_sequence(&base.clone().with_object(dim)),
            Err(SynthError::InvalidScene(_))
        ));
        let mut tiny = drone((20.0, 20.0), (0.0, 0.0));
        tiny.size = 3.0;
        assert!(render_sequence(&base.clone().with_object(tiny)).is_err());
        assert!(render_sequence(&SceneConfig::new(40, 40, 0, Background::Flat(0))).is_err());
    }

    #[test]
    fn rendering_is_deterministic_and_seed_sensitive() {
        let cfg = SceneConfig::new(
            48,
            32,
            4,
            Background::NoisyFlat {
                gray: 60,
                sigma: 4.0,
            },
        )
        .with_object(ObjectSpec {
            kind: ObjectKind::Bird,
            size: 12.0,
            start: (20.0, 16.0),
            velocity: (1.0, 0.5),
            intensity: 180,
            appear_frame: 0,
        })
        .with_noise(3.0)
        .with_seed(17);
        assert_eq!(
            render_sequence(&cfg).unwrap(),
            render_sequence(&cfg).unwrap()
        );
        assert_ne!(
            render_sequence(&cfg).unwrap(),
            render_sequence(&cfg.clone().with_seed(18)).unwrap()
        );
    }

    #[test]
    fn boxes_are_tight_for_every_kind() {
        for (i, kind) in [ObjectKind::Drone, ObjectKind::Bird, ObjectKind::Plane]
            .into_iter()
            .enumerate()
        {
            for frame in 0..8 {
                let phase = wing_phase(3, i, frame);
                let pixels = rasterize(kind, 15.0, phase, (20.3, 19.7), 40, 40);
                let b = tight_box(&pixels).unwrap();
                let (x0, y0) = (b.x as usize, b.y as usize);
                let (x1, y1) = (x0 + b.w as usize - 1, y0 + b.h as usize - 1);
                assert!(pixels
                    .iter()
                    .all(|&(x, y)| x >= x0 && x <= x1 && y >= y0 && y <= y1));
                assert!(pixels.iter().any(|p| p.0 == x0) && pixels.iter().any(|p| p.0 == x1));
                assert!(pixels.iter().any(|p| p.1 == y0) && pixels.iter().any(|p| p.1 == y1));
            }
        }
    }

    #[test]
    fn silhouettes_have_distinct_aspect_ratios() {
        let aspect = |kind| {
            let b = tight_box(&rasterize(kind, 16.0, 0.3, (20.0, 20.0), 40, 40)).unwrap();
            b.w / b.h
        };
        assert!((aspect(ObjectKind::Drone) - 1.0).abs() < 0.15);
        assert!(aspect(ObjectKind::Bird) > 1.5);
        assert!(aspect(ObjectKind::Plane) > 2.5);
    }

    #[test]
    fn fliph_example_and_involution() {
        let f = Frame::gray(100, 80, (0..8000).map(|i| (i % 251) as u8).collect()).unwrap();
        let anns = [Annotation {
            bbox: BoundingBox {
                x: 10.0,
                y: 20.0,
                w: 30.0,
                h: 40.0,
            },
            kind: ObjectKind::Drone,
        }];
        let (g, a) = augment(&f, &anns, AugmentOp::FlipH).unwrap();
        assert_eq!(
            a[0].bbox,
            BoundingBox {
                x: 60.0,
                y: 20.0,
                w: 30.0,
                h: 40.0
            }
        );
        let (g2, a2) = augment(&g, &a, AugmentOp::FlipH).unwrap();
        assert_eq!((g2, a2), (f, anns.to_vec()));
    }

    #[test]
    fn rotate90_box_tracks_pixels() {
        let mut f = Frame::filled(7, 5, 0).unwrap();
        for y in 1..3 {
            for x in 2..6 {
                f.set(x, y, 255);
            }
        }
        let anns = [Annotation {
            bbox: BoundingBox {
                x: 2.0,
                y: 1.0,
                w: 4.0,
                h: 2.0,
            },
            kind: ObjectKind::Plane,
        }];
        let (g, a) = augment(&f, &anns, AugmentOp::Rotate90).unwrap();
        let b = a[0].bbox;
        for y in 0..g.height() {
            for x in 0..g.width() {
                let inside = (x as f64) >= b.x
                    && (x as f64) < b.right()
                    && (y as f64) >= b.y
                    && (y as f64) < b.bottom();
                assert_eq!(g.at(x, y) == 255, inside, "({x},{y})");
            }
        }
    }

    #[test]
    fn crop_drops_mostly_clipped_boxes() {
        let f = Frame::filled(50, 50, 9).unwrap();
        let anns = [
            Annotation {
                bbox: BoundingBox {
                    x: 5.0,
                    y: 5.0,
                    w: 10.0,
                    h: 10.0,
                },
                kind: ObjectKind::Drone,
            },
            Annotation {
                bbox: BoundingBox {
                    x: 18.0,
                    y: 5.0,
                    w: 10.0,
                    h: 10.0,
                },
                kind: ObjectKind::Bird,
            },
        ];
        let region = BoundingBox {
            x: 0.0,
            y: 0.0,
            w: 20.0,
            h: 20.0,
        };
        let (g, a) = augment(&f, &anns, AugmentOp::Crop(region)).unwrap();
        assert_eq!((g.width(), g.height()), (20, 20));
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].kind, ObjectKind::Drone);
        let outside = BoundingBox {
            x: 40.0,
            y: 40.0,
            w: 20.0,
            h: 20.0,
        };
        assert!(augment(&f, &anns, AugmentOp::Crop(outside)).is_err());
        assert!(augment(&f, &anns, AugmentOp::Scale(0.0)).is_err());
    }

    #[test]
    fn brightness_shift_moves_mean_exactly() {
        let f = Frame::gray(4, 4, (0..16).map(|i| 100 + i as u8).collect()).unwrap();
        let (g, _) = augment(&f, &[], AugmentOp::Brightness(25)).unwrap();
        assert!((mean_brightness(&g) - mean_brightness(&f) - 25.0 / 255.0).abs() < 1e-12);
    }

    fn arb_box(w: f64, h: f64) -> impl Strategy<Value = BoundingBox> {
        (0.0..w - 2.0, 0.0..h - 2.0, 1.0f64..20.0, 1.0f64..20.0).prop_map(move |(x, y, bw, bh)| {
            BoundingBox {
                x,
                y,
                w: bw.min(w - x),
                h: bh.min(h - y),
            }
        })
    }

    proptest! {
        #[test]
        fn geometric_ops_preserve_iou(a in arb_box(60.0, 40.0), b in arb_box(60.0, 40.0), s in 0.3f64..3.0) {
            let f = Frame::filled(60, 40, 0).unwrap();
            let anns = [Annotation { bbox: a, kind: ObjectKind::Drone }, Annotation { bbox: b, kind: ObjectKind::Bird }];
            let before = iou(&a, &b);
            for op in [AugmentOp::FlipH, AugmentOp::FlipV, AugmentOp::Rotate90, AugmentOp::Rotate180, AugmentOp::Rotate270, AugmentOp::Scale(s)] {
                let (_, out) = augment(&f, &anns, op).unwrap();
                prop_assert!((iou(&out[0].bbox, &out[1].bbox) - before).abs() < 1e-9, "{:?}", op);
            }
        }
    }
}
