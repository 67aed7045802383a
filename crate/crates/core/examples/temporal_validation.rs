//! Frame-to-frame consistency and the alert latch on a hand-made detection stream.

use vbsf::geometry::{BoundingBox, Detection};
use vbsf::validator::{alert_decision, check_consistency, TrackState, ValidatorConfig};

fn main() {
    let cfg = ValidatorConfig::default();
    let mut state = TrackState::default();
    for frame in 0..30u64 {
        // a target drifting right, absent for frames 12..24
        let dets = if (12..24).contains(&frame) {
            Vec::new()
        } else {
            vec![Detection::drone(
                BoundingBox::new(10.0 + frame as f64, 20.0, 12.0, 8.0).unwrap(),
                0.9,
            )]
        };
        let consistent = check_consistency(&mut state, &dets, &cfg);
        let alert = alert_decision(&mut state, &cfg, frame, frame as f64 / 25.0);
        println!(
            "frame {frame:2}: {} detections, consistent {consistent:5}, run {}{}",
            dets.len(),
            state.consecutive_consistent,
            alert
                .map(|a| format!("  ALERT score {:.2}", a.score))
                .unwrap_or_default()
        );
    }
}
