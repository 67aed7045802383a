//! End to end: train a model, then run the scheduled pipeline on a drone
//! flyby and a bird-only scene with a file alert sink.
//!
//! cargo run --release --example run_pipeline -- [alerts.jsonl]

use std::convert::Infallible;

use vbsf::alerts::{AlertSink, FileSink};
use vbsf::detector::{default_training_config, train};
use vbsf::pipeline::{
    run_pipeline, training_patches, ClockConfig, Pipeline, PipelineConfig, ScheduleConfig,
};
use vbsf::synth::{presets, render_sequence};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let alert_path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "alerts.jsonl".into());
    // one long window so the whole clip is watched continuously
    let cfg = PipelineConfig {
        schedule: ScheduleConfig {
            window_duration: 1e9,
            cycles: 1,
            ..Default::default()
        },
        clock: ClockConfig::Virtual { step: 1.0 },
        ..Default::default()
    };
    let mut patches = Vec::new();
    for seed in 0..10 {
        let seq = render_sequence(&presets::training_mix(150, 100 + seed))?;
        patches.extend(training_patches(&seq, &cfg, 2, seed)?);
    }
    let model = train(&patches, &default_training_config().with_seed(7))?.classifier;

    for (name, scene) in [
        ("drone flyby", presets::drone_flyby(1)),
        ("birds only", presets::birds_only(1)),
    ] {
        let seq = render_sequence(&scene)?;
        let frames: Vec<Result<_, Infallible>> = seq.frames.into_iter().map(Ok).collect();
        let sinks: Vec<Box<dyn AlertSink>> = vec![Box::new(FileSink::new(alert_path.as_ref())?)];
        let mut pipeline = Pipeline::new(cfg.clone(), model.clone())?;
        let report = run_pipeline(frames, &mut pipeline, sinks, |_| {})?;
        println!(
            "{name}: {} frames, {} detections, alerts at {:?}",
            report.frames_processed,
            report.detections_total,
            report.alerts.iter().map(|a| a.frame).collect::<Vec<_>>()
        );
        println!("  stage ms: {:?}", report.timings);
    }
    println!("alerts appended to {alert_path}");
    Ok(())
}
