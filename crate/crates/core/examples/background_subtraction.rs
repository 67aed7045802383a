//! Temporal-median foreground segmentation and connected-component proposals.

use vbsf::background::{connected_components, MedianSegmenter, Segmenter, DEFAULT_MIN_AREA};
use vbsf::synth::{presets, render_sequence, ObjectKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut scene = presets::drone_flyby(2);
    scene.frame_count = 90;
    let seq = render_sequence(&scene)?;
    let mut segmenter = MedianSegmenter::default();
    for (t, frame) in seq.frames.iter().enumerate() {
        let mask = segmenter.segment(frame)?;
        if t % 10 != 9 {
            continue;
        }
        let proposals = connected_components(&mask, DEFAULT_MIN_AREA / 4);
        let truth = seq.boxes_of(t, Some(ObjectKind::Drone));
        println!(
            "frame {t:3}: {:4} foreground px, proposals {proposals:?}, truth {truth:?}",
            mask.count()
        );
    }
    Ok(())
}
