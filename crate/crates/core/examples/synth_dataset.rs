//! Renders a scene, augments one frame and writes the sequence to disk.
//!
//! cargo run --example synth_dataset -- [out_dir]

use vbsf::dataset::{read_dataset, write_dataset, ImageFormat};
use vbsf::synth::{augment, presets, render_sequence, AugmentOp};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::path::PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "synth_out".into()),
    );
    let scene = presets::training_mix(60, 42);
    println!("{}", serde_json::to_string_pretty(&scene)?);
    let seq = render_sequence(&scene)?;
    write_dataset(&seq, &out, ImageFormat::Png)?;
    let back = read_dataset(&out)?;
    println!(
        "wrote and re-read {} frames in {}",
        back.frames.len(),
        out.display()
    );

    let t = 45;
    for op in [
        AugmentOp::FlipH,
        AugmentOp::Rotate90,
        AugmentOp::Scale(1.5),
        AugmentOp::Brightness(-10),
    ] {
        let (f, anns) = augment(&seq.frames[t], &seq.annotations[t], op)?;
        let boxes: Vec<_> = anns.iter().map(|a| (a.kind.as_str(), a.bbox)).collect();
        println!("{op:?}: {}x{} {boxes:?}", f.width(), f.height());
    }
    Ok(())
}
