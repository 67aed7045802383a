//! The scheduled detection loop: brightness gate, enhancement, background
//! subtraction, patch classification, temporal validation and alerting.

use std::ops::ControlFlow;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alerts::{AlertSink, DeliveryConfig, DeliveryRecord, Dispatcher};
use crate::background::{
    connected_components, BackgroundError, ForegroundMask, MedianSegmenter, Segmenter,
    DEFAULT_DIFF_THRESHOLD, DEFAULT_MIN_AREA, DEFAULT_WARMUP, DEFAULT_WINDOW,
};
use crate::detector::{
    detect, extract_features, DetectorError, LabeledPatch, SigmoidClassifier,
    DEFAULT_SCORE_THRESHOLD,
};
use crate::frame::{Frame, FrameError};
use crate::geometry::{iou, BoundingBox, Detection};
use crate::preprocess::{
    dehaze_stretch, denoise_median, mean_brightness, nightvision_grayscale, ClassicalUpscaler,
    Enhancer, ResampleMethod,
};
use crate::synth::{AnnotatedSequence, ObjectKind};
use crate::validator::{
    alert_decision, check_consistency, AlertEvent, TrackState, ValidatorConfig,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Background(#[from] BackgroundError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    /// Seconds of acquisition per window.
    pub window_duration: f64,
    /// Seconds of idle time between windows.
    pub wait_duration: f64,
    pub cycles: u32,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            window_duration: 600.0,
            wait_duration: 1800.0,
            cycles: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockConfig {
    #[default]
    Wall,
    /// Simulated time advancing `step` seconds per frame.
    Virtual { step: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub brightness_threshold: f64,
    /// Process bright frames too instead of skipping them.
    pub enhance_always: bool,
    pub sr_factor: usize,
    pub sr_method: ResampleMethod,
    pub denoise_radius: usize,
    pub dehaze_low_pct: f64,
    pub dehaze_high_pct: f64,
    pub bg_window: usize,
    pub bg_diff_threshold: u8,
    pub bg_min_area: usize,
    pub bg_warmup: usize,
    pub score_threshold: f64,
    pub validator: ValidatorConfig,
    pub schedule: ScheduleConfig,
    pub clock: ClockConfig,
    pub delivery: DeliveryConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            brightness_threshold: 0.35,
            enhance_always: false,
            sr_factor: 2,
            sr_method: ResampleMethod::Lanczos3,
            denoise_radius: 1,
            dehaze_low_pct: 1.0,
            dehaze_high_pct: 99.0,
            bg_window: DEFAULT_WINDOW,
            bg_diff_threshold: DEFAULT_DIFF_THRESHOLD,
            bg_min_area: DEFAULT_MIN_AREA,
            bg_warmup: DEFAULT_WARMUP,
            score_threshold: DEFAULT_SCORE_THRESHOLD,
            validator: ValidatorConfig::default(),
            schedule: ScheduleConfig::default(),
            clock: ClockConfig::default(),
            delivery: DeliveryConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let cfg: PipelineConfig =
            serde_json::from_str(text).map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::InvalidConfig(m));
        if !(0.0..=1.0).contains(&self.brightness_threshold) {
            return bad(format!(
                "brightness_threshold {} outside [0, 1]",
                self.brightness_threshold
            ));
        }
        if self.sr_factor == 0 {
            return bad("sr_factor must be at least 1".into());
        }
        if !(0.0 <= self.dehaze_low_pct
            && self.dehaze_low_pct < self.dehaze_high_pct
            && self.dehaze_high_pct <= 100.0)
        {
            return bad(format!(
                "dehaze percentiles must satisfy 0 <= low < high <= 100, got {} and {}",
                self.dehaze_low_pct, self.dehaze_high_pct
            ));
        }
        if self.bg_window == 0 {
            return bad("bg_window must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return bad(format!(
                "score_threshold {} outside [0, 1]",
                self.score_threshold
            ));
        }
        self.validator
            .validate()
            .map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
        let s = &self.schedule;
        if !(s.window_duration.is_finite() && s.window_duration > 0.0) {
            return bad(format!(
                "schedule.window_duration must be positive, got {}",
                s.window_duration
            ));
        }
        if !(s.wait_duration.is_finite() && s.wait_duration > 0.0) {
            return bad(format!(
                "schedule.wait_duration must be positive, got {}",
                s.wait_duration
            ));
        }
        if s.cycles == 0 {
            return bad("schedule.cycles must be at least 1".into());
        }
        if let ClockConfig::Virtual { step } = self.clock {
            if !(step.is_finite() && step > 0.0) {
                return bad(format!("virtual clock step must be positive, got {step}"));
            }
        }
        if self.delivery.attempts == 0 {
            return bad("delivery.attempts must be at least 1".into());
        }
        Ok(())
    }
}

pub trait Clock {
    /// Seconds since the clock started.
    fn now(&self) -> f64;
    /// Called after each frame is pulled from the source.
    fn frame_tick(&mut self);
    fn wait(&mut self, seconds: f64);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VirtualClock {
    pub time: f64,
    pub step: f64,
}

impl VirtualClock {
    pub fn new(step: f64) -> Self {
        VirtualClock { time: 0.0, step }
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> f64 {
        self.time
    }

    fn frame_tick(&mut self) {
        self.time += self.step;
    }

    fn wait(&mut self, seconds: f64) {
        self.time += seconds;
    }
}

#[derive(Debug, Clone, Copy)]
pub struct WallClock {
    start: Instant,
}

impl Default for WallClock {
    fn default() -> Self {
        WallClock {
            start: Instant::now(),
        }
    }
}

impl Clock for WallClock {
    fn now(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    fn frame_tick(&mut self) {}

    fn wait(&mut self, seconds: f64) {
        std::thread::sleep(Duration::from_secs_f64(seconds));
    }
}

pub fn make_clock(cfg: &ClockConfig) -> Box<dyn Clock> {
    match *cfg {
        ClockConfig::Wall => Box::new(WallClock::default()),
        ClockConfig::Virtual { step } => Box::new(VirtualClock::new(step)),
    }
}

/// Runs `cycles` acquisition windows separated by waits. `body` is called
/// once per frame slot with the window index and returns `Break` when the
/// source is exhausted. Returns the number of body calls that continued,
/// per window; a window whose first call breaks is not counted.
pub fn schedule_loop(
    schedule: &ScheduleConfig,
    clock: &mut dyn Clock,
    mut body: impl FnMut(usize) -> ControlFlow<()>,
) -> Vec<usize> {
    let mut windows = Vec::new();
    for cycle in 0..schedule.cycles as usize {
        let start = clock.now();
        let mut frames = 0;
        let mut exhausted = false;
        while clock.now() - start < schedule.window_duration {
            if body(cycle).is_break() {
                exhausted = true;
                break;
            }
            frames += 1;
            clock.frame_tick();
        }
        if frames > 0 {
            windows.push(frames);
        }
        if exhausted {
            break;
        }
        if cycle + 1 < schedule.cycles as usize {
            clock.wait(schedule.wait_duration);
        }
    }
    windows
}

/// Accumulated wall time per stage, in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub grayscale_ms: f64,
    pub super_resolution_ms: f64,
    pub denoise_ms: f64,
    pub dehaze_ms: f64,
    pub background_ms: f64,
    pub detection_ms: f64,
    pub validation_ms: f64,
}

fn timed<T>(acc: &mut f64, f: impl FnOnce() -> T) -> T {
    let t = Instant::now();
    let out = f();
    *acc += t.elapsed().as_secs_f64() * 1000.0;
    out
}

/// Enhancement chain applied to every processed frame: grayscale,
/// super-resolution, denoise, dehaze.
pub struct FrontEnd {
    enhancer: Box<dyn Enhancer>,
    denoise_radius: usize,
    dehaze: (f64, f64),
}

impl FrontEnd {
    pub fn new(cfg: &PipelineConfig) -> Self {
        FrontEnd {
            enhancer: Box::new(ClassicalUpscaler {
                factor: cfg.sr_factor,
                method: cfg.sr_method,
            }),
            denoise_radius: cfg.denoise_radius,
            dehaze: (cfg.dehaze_low_pct, cfg.dehaze_high_pct),
        }
    }

    pub fn with_enhancer(mut self, enhancer: Box<dyn Enhancer>) -> Self {
        self.enhancer = enhancer;
        self
    }

    pub fn factor(&self) -> usize {
        self.enhancer.factor()
    }

    pub fn enhance(&self, f: &Frame, timings: &mut StageTimings) -> Result<Frame, PipelineError> {
        let g = timed(&mut timings.grayscale_ms, || nightvision_grayscale(f));
        let g = timed(&mut timings.super_resolution_ms, || {
            self.enhancer.enhance(&g)
        });
        let g = if self.denoise_radius > 0 {
            timed(&mut timings.denoise_ms, || {
                denoise_median(&g, self.denoise_radius)
            })?
        } else {
            g
        };
        Ok(timed(&mut timings.dehaze_ms, || {
            dehaze_stretch(&g, self.dehaze.0, self.dehaze.1)
        })?)
    }
}

/// What happened to one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutcome {
    pub index: u64,
    pub timestamp: f64,
    pub brightness: f64,
    pub skipped_bright: bool,
    /// Detections in source-frame coordinates, highest score first.
    pub detections: Vec<Detection>,
    pub consistent: bool,
    pub alert: Option<AlertEvent>,
}

/// Per-frame state machine. Frames must arrive in index order.
pub struct Pipeline {
    cfg: PipelineConfig,
    classifier: SigmoidClassifier,
    front: FrontEnd,
    segmenter: MedianSegmenter,
    track: TrackState,
    pub timings: StageTimings,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, classifier: SigmoidClassifier) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let front = FrontEnd::new(&cfg);
        let segmenter = MedianSegmenter::new(cfg.bg_window, cfg.bg_diff_threshold, cfg.bg_warmup)?;
        Ok(Pipeline {
            cfg,
            classifier,
            front,
            segmenter,
            track: TrackState::default(),
            timings: StageTimings::default(),
        })
    }

    pub fn with_enhancer(mut self, enhancer: Box<dyn Enhancer>) -> Self {
        self.front = self.front.with_enhancer(enhancer);
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    /// Forgets the background model and the track, as at the start of a window.
    pub fn reset(&mut self) {
        self.segmenter.model =
            crate::background::BackgroundModel::new(self.cfg.bg_window).expect("validated window");
        self.track = TrackState::default();
    }

    pub fn process(&mut self, f: &Frame) -> Result<FrameOutcome, PipelineError> {
        let brightness = mean_brightness(f);
        let mut out = FrameOutcome {
            index: f.index,
            timestamp: f.timestamp,
            brightness,
            skipped_bright: false,
            detections: Vec::new(),
            consistent: false,
            alert: None,
        };
        if brightness >= self.cfg.brightness_threshold && !self.cfg.enhance_always {
            out.skipped_bright = true;
            return Ok(out);
        }
        let g = self.front.enhance(f, &mut self.timings)?;
        let mask = timed(&mut self.timings.background_ms, || {
            self.segmenter.segment(&g)
        })?;
        let factor = self.front.factor() as f64;
        let detections = timed(
            &mut self.timings.detection_ms,
            || -> Result<_, PipelineError> {
                let proposals = connected_components(&mask, self.cfg.bg_min_area);
                let dets = detect(
                    &g,
                    &proposals,
                    &self.classifier,
                    self.cfg.score_threshold,
                    Some(&mask),
                )?;
                Ok(dets
                    .into_iter()
                    .map(|d| Detection {
                        bbox: d.bbox.scale(1.0 / factor),
                        ..d
                    })
                    .collect::<Vec<_>>())
            },
        )?;
        let validator = &self.cfg.validator;
        let (consistent, alert) = timed(&mut self.timings.validation_ms, || {
            let consistent = check_consistency(&mut self.track, &detections, validator);
            (
                consistent,
                alert_decision(&mut self.track, validator, f.index, f.timestamp),
            )
        });
        out.detections = detections;
        out.consistent = consistent;
        out.alert = alert;
        Ok(out)
    }
}

/// Counts and events from a run. Serializes deterministically; stage
/// timings are kept out of the JSON form.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub frames_processed: usize,
    pub frames_skipped_bright: usize,
    pub frames_failed_decode: usize,
    pub detections_total: usize,
    /// Frames pulled from the source in each executed window.
    pub windows: Vec<usize>,
    pub alerts: Vec<AlertEvent>,
    pub deliveries: Vec<DeliveryRecord>,
    pub dropped_alerts: Vec<u64>,
    #[serde(skip)]
    pub timings: StageTimings,
}

impl RunReport {
    pub fn frames_consumed(&self) -> usize {
        self.frames_processed + self.frames_skipped_bright
    }

    pub fn failed_deliveries(&self) -> usize {
        self.deliveries.iter().filter(|d| !d.success).count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Runs the full scheduled loop over `source`. Each window starts with a
/// fresh background model and track. `observe` sees every frame outcome.
pub fn run_pipeline<I, E>(
    source: I,
    pipeline: &mut Pipeline,
    sinks: Vec<Box<dyn AlertSink>>,
    mut observe: impl FnMut(&FrameOutcome),
) -> Result<RunReport, PipelineError>
where
    I: IntoIterator<Item = Result<Frame, E>>,
    E: std::fmt::Display,
{
    let cfg = pipeline.config().clone();
    let mut clock = make_clock(&cfg.clock);
    let dispatcher = Dispatcher::spawn(sinks, cfg.delivery);
    let mut report = RunReport::default();
    let mut source = source.into_iter();
    let mut failure = None;
    let mut current_window = usize::MAX;

    report.windows = schedule_loop(&cfg.schedule, clock.as_mut(), |window| {
        if window != current_window {
            current_window = window;
            pipeline.reset();
        }
        // decode failures occupy a frame slot but are not consumed frames
        let frame = loop {
            match source.next() {
                None => return ControlFlow::Break(()),
                Some(Ok(f)) => break f,
                Some(Err(e)) => {
                    log::warn!("skipping undecodable frame: {e}");
                    report.frames_failed_decode += 1;
                }
            }
        };
        match pipeline.process(&frame) {
            Ok(outcome) => {
                if outcome.skipped_bright {
                    report.frames_skipped_bright += 1;
                } else {
                    report.frames_processed += 1;
                }
                report.detections_total += outcome.detections.len();
                if let Some(alert) = outcome.alert {
                    log::info!("alert at frame {} (score {:.3})", alert.frame, alert.score);
                    report.alerts.push(alert);
                    dispatcher.submit(alert);
                }
                observe(&outcome);
                ControlFlow::Continue(())
            }
            Err(e) => {
                failure = Some(e);
                ControlFlow::Break(())
            }
        }
    });

    let summary = dispatcher.finish();
    if let Some(e) = failure {
        return Err(e);
    }
    report.deliveries = summary.deliveries;
    report
        .deliveries
        .sort_by(|a, b| a.frame.cmp(&b.frame).then_with(|| a.sink.cmp(&b.sink)));
    report.dropped_alerts = summary.dropped.iter().map(|e| e.frame).collect();
    report.timings = pipeline.timings;
    Ok(report)
}

/// Minimum IoU for a training proposal to inherit an annotation's label.
pub const PROPOSAL_MATCH_IOU: f64 = 0.3;

/// Training samples drawn from a ground-truthed sequence through the same
/// front end and background model the pipeline uses. Drone boxes are
/// positives; bird and plane boxes, plus `negatives_per_frame` random boxes
/// clear of every object, are negatives. Foreground proposals are added too,
/// labelled by the annotation they overlap (or negative when they overlap
/// nothing). Frames before the background model warms up are skipped.
pub fn training_patches(
    seq: &AnnotatedSequence,
    cfg: &PipelineConfig,
    negatives_per_frame: usize,
    seed: u64,
) -> Result<Vec<LabeledPatch>, PipelineError> {
    cfg.validate()?;
    let front = FrontEnd::new(cfg);
    let factor = front.factor() as f64;
    let mut segmenter = MedianSegmenter::new(cfg.bg_window, cfg.bg_diff_threshold, cfg.bg_warmup)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut timings = StageTimings::default();
    let mut out = Vec::new();
    for (frame, anns) in seq.frames.iter().zip(&seq.annotations) {
        let g = front.enhance(frame, &mut timings)?;
        let mask = segmenter.segment(&g)?;
        if !segmenter.is_warm() {
            continue;
        }
        let scaled: Vec<BoundingBox> = anns.iter().map(|a| a.bbox.scale(factor)).collect();
        for (a, b) in anns.iter().zip(&scaled) {
            out.push(patch(&g, b, &mask, (a.kind == ObjectKind::Drone) as u8)?);
        }
        // proposals as the running pipeline would see them, labelled by the
        // object they overlap; ambiguous partial overlaps are left out
        for b in connected_components(&mask, cfg.bg_min_area) {
            let best = anns
                .iter()
                .zip(&scaled)
                .map(|(a, s)| (iou(s, &b), a.kind))
                .max_by(|x, y| x.0.total_cmp(&y.0));
            match best {
                Some((v, kind)) if v >= PROPOSAL_MATCH_IOU => {
                    out.push(patch(&g, &b, &mask, (kind == ObjectKind::Drone) as u8)?)
                }
                Some((v, _)) if v > 0.0 => {}
                _ => out.push(patch(&g, &b, &mask, 0)?),
            }
        }
        let sizes: Vec<(f64, f64)> = scaled.iter().map(|b| (b.w, b.h)).collect();
        for _ in 0..negatives_per_frame {
            if let Some(b) = background_box(&mut rng, g.width(), g.height(), &sizes, &scaled) {
                out.push(patch(&g, &b, &mask, 0)?);
            }
        }
    }
    Ok(out)
}

fn patch(
    g: &Frame,
    b: &BoundingBox,
    mask: &ForegroundMask,
    label: u8,
) -> Result<LabeledPatch, PipelineError> {
    Ok(LabeledPatch {
        features: extract_features(g, b, Some(mask))?,
        label,
    })
}

fn background_box(
    rng: &mut ChaCha8Rng,
    width: usize,
    height: usize,
    sizes: &[(f64, f64)],
    avoid: &[BoundingBox],
) -> Option<BoundingBox> {
    for _ in 0..20 {
        let (w, h) = if sizes.is_empty() || rng.random_bool(0.5) {
            (
                rng.random_range(8.0..=32.0f64).round(),
                rng.random_range(8.0..=32.0f64).round(),
            )
        } else {
            sizes[rng.random_range(0..sizes.len())]
        };
        if w >= width as f64 || h >= height as f64 {
            continue;
        }
        let x = rng.random_range(0.0..width as f64 - w).floor();
        let y = rng.random_range(0.0..height as f64 - h).floor();
        let b = BoundingBox { x, y, w, h };
        if avoid.iter().all(|a| iou(a, &b) == 0.0) {
            return Some(b);
        }
    }
    None
}
