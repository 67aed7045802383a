//! Runs the enhancement chain on one dark synthetic frame and saves each stage.
//!
//! cargo run --example preprocess_frame -- [out_dir]

use std::path::PathBuf;

use vbsf::dataset::encode_pgm;
use vbsf::preprocess::{
    dehaze_stretch, denoise_median, mean_brightness, nightvision_grayscale, upscale, ResampleMethod,
};
use vbsf::synth::{presets, render_sequence};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "preprocess_out".into()),
    );
    std::fs::create_dir_all(&out)?;
    let mut scene = presets::drone_flyby(1);
    scene.frame_count = 80;
    let frame = render_sequence(&scene)?.frames.swap_remove(79);

    let gray = nightvision_grayscale(&frame);
    let big = upscale(&gray, 2, ResampleMethod::Lanczos3);
    let clean = denoise_median(&big, 1)?;
    let stretched = dehaze_stretch(&clean, 1.0, 99.0)?;
    for (name, f) in [
        ("0_input", &frame),
        ("1_gray", &gray),
        ("2_upscaled", &big),
        ("3_denoised", &clean),
        ("4_dehazed", &stretched),
    ] {
        std::fs::write(out.join(format!("{name}.pgm")), encode_pgm(f)?)?;
        println!(
            "{name:<12} {}x{} brightness {:.3}",
            f.width(),
            f.height(),
            mean_brightness(f)
        );
    }
    println!("stages written to {}", out.display());
    Ok(())
}
