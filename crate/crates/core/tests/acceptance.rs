//! Acceptance suite. Each test prints one `PASS`/`FAIL` line and then asserts.
//! Tests share a lock so the wall-clock limits are measured without
//! interference from each other.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vbsf::alerts::{AlertSink, DeliveryConfig, FileSink, WebhookSink};
use vbsf::background::{BackgroundModel, DEFAULT_DIFF_THRESHOLD};
use vbsf::detector::{
    default_training_config, extract_features, train, LabeledPatch, SigmoidClassifier, FEATURE_LEN,
};
use vbsf::frame::Frame;
use vbsf::geometry::{iou, BoundingBox};
use vbsf::metrics::{cross_validate, f1_score, roc};
use vbsf::pipeline::{
    run_pipeline, training_patches, ClockConfig, Pipeline, PipelineConfig, RunReport,
    ScheduleConfig,
};
use vbsf::pso::{optimize, step_position, step_velocity, Particle, PsoConfig, SwarmState};
use vbsf::synth::{
    augment, presets, render_patch, render_sequence, Annotation, AugmentOp, ObjectKind,
};
use vbsf::validator::{offline_validate, ValidatorConfig};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(id: u32, name: &str, pass: bool, detail: String) {
    // written to the raw handle so the line shows up even under output capture
    let line = format!(
        "acceptance {id:02} {name}: {} ({detail})\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
    assert!(pass, "acceptance {id:02} {name} failed: {detail}");
}

fn bb(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
    BoundingBox::new(x, y, w, h).unwrap()
}

fn infallible(frames: &[Frame]) -> Vec<Result<Frame, std::convert::Infallible>> {
    frames.iter().cloned().map(Ok).collect()
}

/// A classifier whose bias drowns every feature: scores ~1 (or ~0) everywhere.
fn constant_classifier(bias: f64) -> SigmoidClassifier {
    let mut params = vec![0.0; FEATURE_LEN + 1];
    params[FEATURE_LEN] = bias;
    SigmoidClassifier::from_params(&params).unwrap()
}

#[test]
fn iou_matches_pixel_rasterization() {
    let _guard = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let random_box = |rng: &mut ChaCha8Rng| {
        let x0 = rng.random_range(0..64u32);
        let y0 = rng.random_range(0..64u32);
        let x1 = rng.random_range(x0 + 1..=64);
        let y1 = rng.random_range(y0 + 1..=64);
        (x0, y0, x1, y1)
    };
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let a = random_box(&mut rng);
        let b = random_box(&mut rng);
        let inside =
            |r: (u32, u32, u32, u32), x: u32, y: u32| x >= r.0 && x < r.2 && y >= r.1 && y < r.3;
        let (mut inter, mut union) = (0u32, 0u32);
        for y in 0..64 {
            for x in 0..64 {
                let (ia, ib) = (inside(a, x, y), inside(b, x, y));
                inter += (ia && ib) as u32;
                union += (ia || ib) as u32;
            }
        }
        let oracle = inter as f64 / union as f64;
        let to_box = |r: (u32, u32, u32, u32)| {
            bb(
                r.0 as f64,
                r.1 as f64,
                (r.2 - r.0) as f64,
                (r.3 - r.1) as f64,
            )
        };
        worst = worst.max((iou(&to_box(a), &to_box(b)) - oracle).abs());
    }
    let elapsed = start.elapsed();
    verdict(
        1,
        "iou oracle",
        worst <= 1e-12 && elapsed < Duration::from_secs(1),
        format!("max |error| {worst:e} over 1000 pairs in {elapsed:?}"),
    );
}

#[test]
fn pso_steps_reproduce_hand_example_and_trajectory() {
    let _guard = serial();
    let cfg = PsoConfig::cube(1, -10.0, 10.0).with_coefficients(0.7, 1.5, 1.5);
    let p = Particle {
        position: vec![1.0],
        velocity: vec![1.0],
        pbest_position: vec![3.0],
        pbest_value: 0.0,
    };
    let v = step_velocity(&p, &[5.0], &cfg, &[(0.5, 0.5)]).unwrap();
    let (x, kept) = step_position(&p, &v, &cfg.bounds).unwrap();
    let hand_ok = v == vec![0.7 + 1.5 + 3.0] && x == vec![1.0 + 5.2] && kept == v;

    // Replay a recorded run through the bare step operations.
    let sphere = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
    let cfg = PsoConfig::cube(4, -5.0, 5.0)
        .with_swarm_size(8)
        .with_iterations(30)
        .with_seed(11);
    let mut live = SwarmState::new(&sphere, &cfg, &[]).unwrap();
    let mut replay = live.particles.clone();
    let mut gbest = live.gbest_position.clone();
    let mut gbest_value = live.gbest_value;
    let mut trajectory_ok = true;
    for _ in 0..cfg.max_iterations {
        let draws = live.iterate(&sphere, &cfg).unwrap();
        for (p, d) in replay.iter_mut().zip(&draws) {
            let v = step_velocity(p, &gbest, &cfg, d).unwrap();
            let (x, v) = step_position(p, &v, &cfg.bounds).unwrap();
            p.position = x;
            p.velocity = v;
            let value = sphere(&p.position);
            if value < p.pbest_value {
                p.pbest_value = value;
                p.pbest_position.clone_from(&p.position);
            }
        }
        for p in &replay {
            if p.pbest_value < gbest_value {
                gbest_value = p.pbest_value;
                gbest.clone_from(&p.pbest_position);
            }
        }
        trajectory_ok &= replay == live.particles && gbest == live.gbest_position;
    }
    let outcome = optimize(sphere, &cfg).unwrap();
    trajectory_ok &=
        outcome.best_position == gbest && outcome.best_value.to_bits() == gbest_value.to_bits();
    verdict(
        2,
        "pso equation fidelity",
        hand_ok && trajectory_ok,
        format!("velocity {v:?}, position {x:?}, replayed trajectory identical: {trajectory_ok}"),
    );
}

#[test]
fn pso_converges_on_sphere() {
    let _guard = serial();
    let start = Instant::now();
    let sphere = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
    let mut converged = 0;
    let mut monotone = 0;
    for seed in 0..100 {
        let cfg = PsoConfig::cube(10, -5.0, 5.0)
            .with_swarm_size(30)
            .with_iterations(200)
            .with_coefficients(0.729, 1.49445, 1.49445)
            .with_seed(seed);
        let out = optimize(sphere, &cfg).unwrap();
        converged += (out.best_value < 1e-3) as u32;
        monotone += out.history.windows(2).all(|w| w[1] <= w[0]) as u32;
    }
    let elapsed = start.elapsed();
    verdict(
        3,
        "pso convergence",
        converged >= 95 && monotone == 100 && elapsed < Duration::from_secs(10),
        format!("{converged}/100 below 1e-3, {monotone}/100 non-increasing, {elapsed:?}"),
    );
}

#[test]
fn reported_f1_is_consistent() {
    let _guard = serial();
    let f1 = f1_score(0.8939, 0.9258).unwrap();
    verdict(
        4,
        "reported f1 consistency",
        (f1 - 0.9096).abs() <= 1e-4,
        format!("f1 {f1:.6}"),
    );
}

#[test]
fn temporal_median_recovers_background() {
    let _guard = serial();
    let (w, h) = (128, 64);
    let truth = Frame::filled(w, h, 50).unwrap();
    let mut model = BackgroundModel::new(25).unwrap();
    for t in 0..100usize {
        let mut f = truth.clone();
        let (bx, by) = (t, 20 + t / 5);
        for y in by..by + 12 {
            for x in bx..bx + 12 {
                f.set(x, y, 220);
            }
        }
        model.update(&f).unwrap();
    }
    let background = model.median_background().unwrap();
    let agree = background.pixels().iter().filter(|&&v| v == 50).count();
    let fraction = agree as f64 / (w * h) as f64;
    let mask = model
        .foreground_mask(&truth, DEFAULT_DIFF_THRESHOLD)
        .unwrap();
    verdict(
        5,
        "temporal median recovery",
        fraction >= 0.99 && mask.is_all_false(),
        format!(
            "{:.2}% of pixels recovered, {} foreground pixels on the true background",
            fraction * 100.0,
            mask.count()
        ),
    );
}

fn patch_corpus(per_class: usize, seed: u64) -> Vec<LabeledPatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(2 * per_class);
    for i in 0..2 * per_class {
        let kind = match i % 4 {
            0 | 2 => ObjectKind::Drone,
            1 => ObjectKind::Bird,
            _ => ObjectKind::Plane,
        };
        let background = rng.random_range(10..=60u8);
        let intensity = rng.random_range(160..=230u8);
        let (frame, bbox) = render_patch(kind, background, intensity, 5.0, (8.0, 18.0), &mut rng);
        let features = extract_features(&frame, &bbox, None).unwrap();
        out.push(LabeledPatch {
            features,
            label: (kind == ObjectKind::Drone) as u8,
        });
    }
    out
}

#[test]
fn detector_cross_validates() {
    let _guard = serial();
    let start = Instant::now();
    let data = patch_corpus(500, 21);
    let cv = cross_validate(&data, 4, &default_training_config().with_seed(3)).unwrap();
    let elapsed = start.elapsed();
    verdict(
        6,
        "detector training",
        cv.accuracy.mean >= 0.85 && elapsed < Duration::from_secs(60),
        format!(
            "4-fold accuracy {:.4} ± {:.4} on {} patches in {elapsed:?}",
            cv.accuracy.mean,
            cv.accuracy.std,
            data.len()
        ),
    );
}

fn end_to_end_config() -> PipelineConfig {
    PipelineConfig {
        schedule: ScheduleConfig {
            window_duration: 1e9,
            cycles: 1,
            ..Default::default()
        },
        clock: ClockConfig::Virtual { step: 1.0 },
        ..Default::default()
    }
}

#[test]
fn end_to_end_alerting() {
    let _guard = serial();
    let start = Instant::now();
    let cfg = end_to_end_config();
    let mut patches = Vec::new();
    for scene in 0..10 {
        let seq = render_sequence(&presets::training_mix(150, 100 + scene)).unwrap();
        patches.extend(training_patches(&seq, &cfg, 2, scene).unwrap());
    }
    let model = train(&patches, &default_training_config().with_seed(7))
        .unwrap()
        .classifier;

    let drone = render_sequence(&presets::drone_flyby(1)).unwrap();
    let mut pipeline = Pipeline::new(cfg.clone(), model.clone()).unwrap();
    let (mut visible, mut hit) = (0usize, 0usize);
    let report = run_pipeline(infallible(&drone.frames), &mut pipeline, Vec::new(), |o| {
        let truth = drone.boxes_of(o.index as usize, Some(ObjectKind::Drone));
        if !o.skipped_bright && !truth.is_empty() {
            visible += 1;
            hit += o
                .detections
                .iter()
                .any(|d| truth.iter().any(|g| iou(g, &d.bbox) >= 0.5)) as usize;
        }
    })
    .unwrap();
    let alert_frames: Vec<u64> = report.alerts.iter().map(|a| a.frame).collect();

    let birds = render_sequence(&presets::birds_only(1)).unwrap();
    let mut pipeline = Pipeline::new(cfg, model).unwrap();
    let bird_report =
        run_pipeline(infallible(&birds.frames), &mut pipeline, Vec::new(), |_| {}).unwrap();

    let hit_rate = hit as f64 / visible.max(1) as f64;
    let pass = alert_frames.len() == 1
        && (41..=60).contains(&alert_frames[0])
        && hit_rate >= 0.9
        && bird_report.alerts.is_empty();
    verdict(
        7,
        "end-to-end alerting",
        pass,
        format!(
            "drone alerts at {alert_frames:?}, {hit}/{visible} visible frames hit ({:.1}%), {} bird alerts, {:?}",
            hit_rate * 100.0,
            bird_report.alerts.len(),
            start.elapsed()
        ),
    );
}

#[test]
fn offline_validation_pass_rate() {
    let _guard = serial();
    let truth: Vec<Vec<BoundingBox>> = (0..10)
        .map(|i| vec![bb(5.0 + 3.0 * i as f64, 20.0, 12.0, 8.0)])
        .collect();
    let cfg = ValidatorConfig::default();
    let identical = offline_validate(&truth, &truth, &cfg).unwrap().pass_rate;
    let mut corrupted = truth.clone();
    corrupted[4][0] = corrupted[4][0].translate(6.0, 0.0);
    let one_off = offline_validate(&corrupted, &truth, &cfg)
        .unwrap()
        .pass_rate;
    verdict(
        8,
        "offline validation",
        identical == 1.0 && one_off == 0.9,
        format!("identical {identical}, one corrupted frame {one_off}"),
    );
}

#[test]
fn roc_sanity() {
    let _guard = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let labels: Vec<u8> = (0..1000).map(|i| (i % 2) as u8).collect();
    let separable: Vec<f64> = labels
        .iter()
        .map(|&l| {
            if l == 1 {
                rng.random_range(0.6..1.0)
            } else {
                rng.random_range(0.0..0.4)
            }
        })
        .collect();
    let separable_auc = roc(&separable, &labels).unwrap().auc;
    let mut shuffled = labels.clone();
    shuffled.shuffle(&mut rng);
    let shuffled_auc = roc(&separable, &shuffled).unwrap().auc;
    verdict(
        9,
        "roc sanity",
        separable_auc == 1.0 && (0.45..=0.55).contains(&shuffled_auc),
        format!("separable auc {separable_auc}, shuffled auc {shuffled_auc:.4}"),
    );
}

#[test]
fn augmentation_algebra() {
    let _guard = serial();
    let seq = render_sequence(&presets::drone_flyby(2)).unwrap();
    let frame = &seq.frames[120];
    let anns = &seq.annotations[120];
    let (once, a1) = augment(frame, anns, AugmentOp::FlipH).unwrap();
    let (twice, a2) = augment(&once, &a1, AugmentOp::FlipH).unwrap();
    let flip_ok = &twice == frame && &a2 == anns && once != *frame;
    let (mut rotated, mut ra) = (frame.clone(), anns.clone());
    for _ in 0..4 {
        (rotated, ra) = augment(&rotated, &ra, AugmentOp::Rotate90).unwrap();
    }
    let rotate_ok = &rotated == frame && &ra == anns;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let canvas = Frame::filled(80, 48, 0).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let mut random_box = || {
            let w = rng.random_range(1.0..40.0);
            let h = rng.random_range(1.0..24.0);
            bb(
                rng.random_range(0.0..80.0 - w),
                rng.random_range(0.0..48.0 - h),
                w,
                h,
            )
        };
        let pair = [
            Annotation {
                bbox: random_box(),
                kind: ObjectKind::Drone,
            },
            Annotation {
                bbox: random_box(),
                kind: ObjectKind::Bird,
            },
        ];
        let before = iou(&pair[0].bbox, &pair[1].bbox);
        let scale = rng.random_range(0.25..4.0);
        for op in [
            AugmentOp::FlipH,
            AugmentOp::FlipV,
            AugmentOp::Rotate90,
            AugmentOp::Rotate180,
            AugmentOp::Rotate270,
            AugmentOp::Scale(scale),
        ] {
            let (_, out) = augment(&canvas, &pair, op).unwrap();
            worst = worst.max((iou(&out[0].bbox, &out[1].bbox) - before).abs());
        }
    }
    verdict(
        10,
        "augmentation algebra",
        flip_ok && rotate_ok && worst <= 1e-9,
        format!("flip involution {flip_ok}, rotate90^4 identity {rotate_ok}, max iou drift {worst:e} over 500 cases"),
    );
}

fn scheduled_run() -> RunReport {
    let cfg = PipelineConfig {
        clock: ClockConfig::Virtual { step: 60.0 },
        ..Default::default()
    };
    let seq = render_sequence(&presets::drone_flyby(3)).unwrap();
    let mut pipeline = Pipeline::new(cfg, constant_classifier(20.0)).unwrap();
    run_pipeline(infallible(&seq.frames), &mut pipeline, Vec::new(), |_| {}).unwrap()
}

#[test]
fn virtual_schedule() {
    let _guard = serial();
    let start = Instant::now();
    let first = scheduled_run();
    let elapsed = start.elapsed();
    let second = scheduled_run();
    let identical = first.to_json() == second.to_json();
    verdict(
        11,
        "scheduler",
        first.windows == vec![10; 10]
            && first.frames_consumed() == 100
            && identical
            && elapsed < Duration::from_secs(5),
        format!(
            "windows {:?}, reports identical {identical}, {elapsed:?}",
            first.windows
        ),
    );
}

/// Minimal HTTP endpoint answering every request with `status`.
fn stub_server(status: u16) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/alerts", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut content_length = 0;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    content_length = v.trim().parse().unwrap_or(0);
                }
            }
            let mut body = vec![0; content_length];
            let _ = reader.read_exact(&mut body);
            counter.fetch_add(1, Ordering::SeqCst);
            let _ = write!(
                stream,
                "HTTP/1.1 {status} Stub\r\nContent-Length: 0\r\nConnection: close\r\n\r\n"
            );
        }
    });
    (url, hits)
}

#[test]
fn alert_delivery() {
    let _guard = serial();
    let dir = tempfile::tempdir().unwrap();
    let mut scene = presets::drone_flyby(4);
    scene.frame_count = 90;
    let seq = render_sequence(&scene).unwrap();
    let mut cfg = end_to_end_config();
    cfg.delivery = DeliveryConfig {
        backoff_ms: 5,
        timeout_ms: 2000,
        ..Default::default()
    };
    let run = |sinks: Vec<Box<dyn AlertSink>>| {
        let mut pipeline = Pipeline::new(cfg.clone(), constant_classifier(20.0)).unwrap();
        run_pipeline(infallible(&seq.frames), &mut pipeline, sinks, |_| {}).unwrap()
    };
    let timeout = Duration::from_secs(2);
    let baseline = run(Vec::new());

    let (ok_url, ok_hits) = stub_server(200);
    let alert_file = dir.path().join("alerts.jsonl");
    let ok = run(vec![
        Box::new(WebhookSink::new(&ok_url, timeout).unwrap()),
        Box::new(FileSink::new(&alert_file).unwrap()),
    ]);
    let (bad_url, bad_hits) = stub_server(500);
    let bad = run(vec![Box::new(WebhookSink::new(&bad_url, timeout).unwrap())]);

    let alerts = baseline.alerts.len();
    let web_ok = ok
        .deliveries
        .iter()
        .filter(|d| d.sink.starts_with("http"))
        .all(|d| d.success && d.attempts == 1);
    let bad_failed = bad.deliveries.len() == alerts
        && bad.deliveries.iter().all(|d| !d.success && d.attempts == 3)
        && bad.failed_deliveries() == alerts
        && bad_hits.load(Ordering::SeqCst) == 3 * alerts;
    let counts_same = [&ok, &bad].iter().all(|r| {
        r.detections_total == baseline.detections_total
            && r.frames_processed == baseline.frames_processed
            && r.alerts == baseline.alerts
    });
    let text = std::fs::read_to_string(&alert_file).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let jsonl_ok = lines.len() == alerts
        && lines.iter().all(|l| {
            serde_json::from_str::<serde_json::Value>(l)
                .is_ok_and(|v| v["frame"].is_u64() && v["box"]["w"].is_f64())
        });
    verdict(
        12,
        "alert delivery",
        alerts > 0
            && web_ok
            && ok_hits.load(Ordering::SeqCst) == alerts
            && bad_failed
            && counts_same
            && jsonl_ok,
        format!(
            "{alerts} alerts; 2xx delivered {web_ok}; 500s failed after 3 attempts {bad_failed}; \
             counts unchanged {counts_same}; {} valid JSON lines",
            lines.len()
        ),
    );
}
