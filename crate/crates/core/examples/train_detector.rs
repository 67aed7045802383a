//! Trains the patch classifier with the swarm on proposals from synthetic
//! scenes and saves it.
//!
//! cargo run --release --example train_detector -- [model.txt]

use vbsf::detector::{accuracy, default_training_config, train};
use vbsf::pipeline::{training_patches, ClockConfig, PipelineConfig};
use vbsf::synth::{presets, render_sequence};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "model.txt".into());
    let cfg = PipelineConfig {
        clock: ClockConfig::Virtual { step: 1.0 },
        ..Default::default()
    };
    let mut patches = Vec::new();
    for seed in 0..6 {
        let seq = render_sequence(&presets::training_mix(120, 100 + seed))?;
        patches.extend(training_patches(&seq, &cfg, 2, seed)?);
    }
    let positives = patches.iter().filter(|p| p.label == 1).count();
    println!("{} patches, {positives} drone", patches.len());

    let outcome = train(&patches, &default_training_config().with_seed(7))?;
    for (i, (loss, acc)) in outcome
        .loss_history
        .iter()
        .zip(&outcome.accuracy_history)
        .enumerate()
        .step_by(10)
    {
        println!("iteration {:2}: loss {loss:.4} accuracy {acc:.4}", i + 1);
    }
    println!(
        "final training accuracy {:.4}",
        accuracy(&outcome.classifier, &patches)
    );
    outcome.classifier.save(out.as_ref())?;
    println!("model saved to {out}");
    Ok(())
}
