//! IoU-based validation: consecutive-frame consistency gating, the alert
//! latch, and offline pass-rate scoring against ground truth.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou, BoundingBox, Detection};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValidatorError {
    #[error("{predictions} prediction frames but {ground_truth} ground-truth frames")]
    FrameCountMismatch {
        predictions: usize,
        ground_truth: usize,
    },
    #[error("invalid validator configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidatorConfig {
    /// IoU needed between detections in consecutive frames.
    pub runtime_iou_threshold: f64,
    /// IoU needed between a prediction and its ground-truth box.
    pub offline_iou_threshold: f64,
    /// Consecutive consistent frames required before alerting.
    pub consecutive_required: u32,
    /// Consecutive inconsistent frames after which a latched alert re-arms.
    pub rearm_after: u32,
}

impl Default for ValidatorConfig {
    fn default() -> Self {
        ValidatorConfig {
            runtime_iou_threshold: 0.5,
            offline_iou_threshold: 0.9,
            consecutive_required: 2,
            rearm_after: 10,
        }
    }
}

impl ValidatorConfig {
    pub fn validate(&self) -> Result<(), ValidatorError> {
        for (name, t) in [
            ("runtime_iou_threshold", self.runtime_iou_threshold),
            ("offline_iou_threshold", self.offline_iou_threshold),
        ] {
            if !(0.0..=1.0).contains(&t) {
                return Err(ValidatorError::InvalidConfig(format!(
                    "{name} = {t} is outside [0, 1]"
                )));
            }
        }
        if self.consecutive_required == 0 {
            return Err(ValidatorError::InvalidConfig(
                "consecutive_required must be at least 1".into(),
            ));
        }
        if self.rearm_after == 0 {
            return Err(ValidatorError::InvalidConfig(
                "rearm_after must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchPair {
    pub a: usize,
    pub b: usize,
    pub iou: f64,
}

/// Greedy one-to-one matching: candidate pairs with positive overlap and IoU
/// at or above `threshold` are taken in descending IoU order, ties broken by
/// `(index in a, index in b)`.
pub fn match_boxes(a: &[BoundingBox], b: &[BoundingBox], threshold: f64) -> Vec<MatchPair> {
    let mut candidates = Vec::new();
    for (i, ba) in a.iter().enumerate() {
        for (j, bb) in b.iter().enumerate() {
            let v = iou(ba, bb);
            if v > 0.0 && v >= threshold {
                candidates.push(MatchPair { a: i, b: j, iou: v });
            }
        }
    }
    candidates.sort_by(|x, y| {
        y.iou
            .total_cmp(&x.iou)
            .then(x.a.cmp(&y.a))
            .then(x.b.cmp(&y.b))
    });
    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut out = Vec::new();
    for c in candidates {
        if !used_a[c.a] && !used_b[c.b] {
            used_a[c.a] = true;
            used_b[c.b] = true;
            out.push(c);
        }
    }
    out
}

pub fn match_detections(a: &[Detection], b: &[Detection], threshold: f64) -> Vec<MatchPair> {
    let ba: Vec<_> = a.iter().map(|d| d.bbox).collect();
    let bb: Vec<_> = b.iter().map(|d| d.bbox).collect();
    match_boxes(&ba, &bb, threshold)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackState {
    pub last_detections: Vec<Detection>,
    pub consecutive_consistent: u32,
    pub inconsistent_streak: u32,
    pub alert_active: bool,
    /// Best-scoring current detection that matched the previous frame.
    pub confirmed: Option<Detection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlertEvent {
    pub frame: u64,
    pub timestamp: f64,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub score: f64,
}

/// Advances the track by one frame. A frame is consistent when it has
/// detections and one of them matches a previous-frame detection. A
/// non-empty but unmatched frame restarts the run at 1; an empty frame
/// resets it to 0.
pub fn check_consistency(
    state: &mut TrackState,
    current: &[Detection],
    cfg: &ValidatorConfig,
) -> bool {
    let pairs = match_detections(&state.last_detections, current, cfg.runtime_iou_threshold);
    let consistent = !current.is_empty() && !pairs.is_empty();
    if consistent {
        state.consecutive_consistent += 1;
        state.inconsistent_streak = 0;
        state.confirmed = pairs
            .iter()
            .map(|p| current[p.b])
            .max_by(|x, y| x.score.total_cmp(&y.score));
    } else {
        state.consecutive_consistent = if current.is_empty() { 0 } else { 1 };
        state.inconsistent_streak += 1;
        state.confirmed = None;
    }
    state.last_detections = current.to_vec();
    consistent
}

/// Fires once when the consistent run reaches the configured length, then
/// latches until `rearm_after` consecutive inconsistent frames have passed.
pub fn alert_decision(
    state: &mut TrackState,
    cfg: &ValidatorConfig,
    frame: u64,
    timestamp: f64,
) -> Option<AlertEvent> {
    if state.alert_active && state.inconsistent_streak >= cfg.rearm_after {
        // the frame that completes the re-arm streak does not start a new run
        state.alert_active = false;
        state.consecutive_consistent = 0;
    }
    if state.alert_active || state.consecutive_consistent < cfg.consecutive_required {
        return None;
    }
    let det = state
        .confirmed
        .or_else(|| state.last_detections.first().copied())?;
    state.alert_active = true;
    // only inconsistent frames after the alert count towards re-arming
    state.inconsistent_streak = 0;
    Some(AlertEvent {
        frame,
        timestamp,
        bbox: det.bbox,
        score: det.score,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameVerdict {
    pub frame: usize,
    pub pass: bool,
    /// Highest IoU between any prediction and any ground-truth box, if both exist.
    pub best_iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineReport {
    pub frames: Vec<FrameVerdict>,
    pub pass_rate: f64,
}

impl OfflineReport {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "frame,pass,best_iou")?;
        for v in &self.frames {
            let best = v.best_iou.map(|x| format!("{x:.6}")).unwrap_or_default();
            writeln!(out, "{},{},{}", v.frame, v.pass as u8, best)?;
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        format!("pass_rate={:.6}", self.pass_rate)
    }
}

/// A frame passes when every ground-truth box is matched at the offline
/// threshold and no prediction is left unmatched.
pub fn offline_validate(
    predictions: &[Vec<BoundingBox>],
    ground_truth: &[Vec<BoundingBox>],
    cfg: &ValidatorConfig,
) -> Result<OfflineReport, ValidatorError> {
    if predictions.len() != ground_truth.len() {
        return Err(ValidatorError::FrameCountMismatch {
            predictions: predictions.len(),
            ground_truth: ground_truth.len(),
        });
    }
    let frames: Vec<FrameVerdict> = predictions
        .iter()
        .zip(ground_truth)
        .enumerate()
        .map(|(frame, (pred, gt))| {
            let pairs = match_boxes(gt, pred, cfg.offline_iou_threshold);
            let pass = pairs.len() == gt.len() && pairs.len() == pred.len();
            let best_iou = gt
                .iter()
                .flat_map(|g| pred.iter().map(move |p| iou(g, p)))
                .max_by(|a, b| a.total_cmp(b));
            FrameVerdict {
                frame,
                pass,
                best_iou,
            }
        })
        .collect();
    let passing = frames.iter().filter(|v| v.pass).count();
    let pass_rate = if frames.is_empty() {
        1.0
    } else {
        passing as f64 / frames.len() as f64
    };
    Ok(OfflineReport { frames, pass_rate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bb(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    fn det(x: f64, y: f64, w: f64, h: f64) -> Detection {
        Detection::drone(bb(x, y, w, h), 0.9)
    }

    #[test]
    fn matching_examples() {
        let a = vec![det(0.0, 0.0, 10.0, 10.0), det(50.0, 50.0, 5.0, 5.0)];
        let pairs = match_detections(&a, &a, 0.9);
        assert_eq!(pairs.len(), 2);
        assert!(pairs.iter().all(|p| p.a == p.b && p.iou == 1.0));

        assert!(
            match_detections(&[det(0.0, 0.0, 2.0, 2.0)], &[det(5.0, 5.0, 2.0, 2.0)], 0.01)
                .is_empty()
        );

        let a = [det(0.0, 0.0, 10.0, 10.0)];
        let b = [det(5.0, 0.0, 10.0, 10.0), det(0.0, 0.0, 10.0, 10.0)];
        let pairs = match_detections(&a, &b, 0.3);
        assert_eq!(
            pairs,
            vec![MatchPair {
                a: 0,
                b: 1,
                iou: 1.0
            }]
        );
    }

    #[test]
    fn consistency_examples() {
        let cfg = ValidatorConfig::default();
        let mut s = TrackState::default();
        assert!(!check_consistency(&mut s, &[], &cfg));
        assert_eq!(s.consecutive_consistent, 0);

        let d = [det(10.0, 10.0, 10.0, 10.0)];
        check_consistency(&mut s, &d, &cfg);
        assert_eq!(s.consecutive_consistent, 1);
        assert!(check_consistency(&mut s, &d, &cfg));
        assert_eq!(s.consecutive_consistent, 2);

        // 60% drift per frame: overlap 4x10 over union 16x10 -> IoU 1/4
        assert!((iou(&bb(0.0, 0.0, 10.0, 10.0), &bb(6.0, 0.0, 10.0, 10.0)) - 0.25).abs() < 1e-12);
        let mut s = TrackState::default();
        for k in 0..20 {
            check_consistency(&mut s, &[det(6.0 * k as f64, 0.0, 10.0, 10.0)], &cfg);
            assert!(s.consecutive_consistent <= 1);
        }
    }

    #[test]
    fn alert_latch_examples() {
        let cfg = ValidatorConfig::default();
        let d = [det(10.0, 10.0, 10.0, 10.0)];
        let mut s = TrackState::default();
        let mut alerts = Vec::new();
        for frame in 0..100u64 {
            check_consistency(&mut s, &d, &cfg);
            alerts.extend(alert_decision(&mut s, &cfg, frame, frame as f64));
        }
        assert_eq!(alerts.len(), 1);
        assert_eq!(alerts[0].frame, 1);

        for frame in 100..110u64 {
            check_consistency(&mut s, &[], &cfg);
            assert!(alert_decision(&mut s, &cfg, frame, 0.0).is_none());
        }
        check_consistency(&mut s, &d, &cfg);
        assert!(alert_decision(&mut s, &cfg, 110, 0.0).is_none());
        check_consistency(&mut s, &d, &cfg);
        let second = alert_decision(&mut s, &cfg, 111, 111.0).expect("re-armed alert");
        assert_eq!(second.frame, 111);
    }

    #[test]
    fn nine_inconsistent_frames_do_not_rearm() {
        let cfg = ValidatorConfig::default();
        let d = [det(10.0, 10.0, 10.0, 10.0)];
        let mut s = TrackState::default();
        let mut count = 0;
        let mut feed = |s: &mut TrackState, dets: &[Detection]| {
            check_consistency(s, dets, &cfg);
            count += alert_decision(s, &cfg, 0, 0.0).is_some() as usize;
        };
        feed(&mut s, &d);
        feed(&mut s, &d);
        for _ in 0..9 {
            feed(&mut s, &[]);
        }
        feed(&mut s, &d);
        feed(&mut s, &d);
        assert_eq!(count, 1);
    }

    #[test]
    fn offline_examples() {
        let cfg = ValidatorConfig::default();
        let gt: Vec<Vec<BoundingBox>> =
            (0..10).map(|i| vec![bb(i as f64, 5.0, 8.0, 8.0)]).collect();
        assert_eq!(offline_validate(&gt, &gt, &cfg).unwrap().pass_rate, 1.0);

        let mut pred = gt.clone();
        pred[3].clear();
        let r = offline_validate(&pred, &gt, &cfg).unwrap();
        assert_eq!(r.pass_rate, 0.9);
        assert!(!r.frames[3].pass);

        let empty: Vec<Vec<BoundingBox>> = vec![vec![]; 10];
        let mut spurious = empty.clone();
        spurious[7].push(bb(0.0, 0.0, 3.0, 3.0));
        assert_eq!(
            offline_validate(&spurious, &empty, &cfg).unwrap().pass_rate,
            0.9
        );

        assert!(matches!(
            offline_validate(&empty[..3], &empty, &cfg),
            Err(ValidatorError::FrameCountMismatch { .. })
        ));
    }

    #[test]
    fn offline_csv() {
        let gt = vec![vec![bb(0.0, 0.0, 4.0, 4.0)], vec![]];
        let pred = vec![vec![bb(0.0, 0.0, 4.0, 4.0)], vec![]];
        let r = offline_validate(&pred, &gt, &ValidatorConfig::default()).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "frame,pass,best_iou\n0,1,1.000000\n1,1,\n"
        );
        assert_eq!(r.summary(), "pass_rate=1.000000");
    }

    #[test]
    fn config_validation() {
        assert!(ValidatorConfig::default().validate().is_ok());
        assert!(ValidatorConfig {
            runtime_iou_threshold: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(ValidatorConfig {
            consecutive_required: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (0i32..40, 0i32..40, 1i32..15, 1i32..15)
            .prop_map(|(x, y, w, h)| bb(x as f64, y as f64, w as f64, h as f64))
    }

    proptest! {
        #[test]
        fn greedy_matches_are_disjoint(a in proptest::collection::vec(arb_box(), 0..8),
                                       b in proptest::collection::vec(arb_box(), 0..8),
                                       t in 0.0f64..1.0) {
            let pairs = match_boxes(&a, &b, t);
            let mut seen_a = std::collections::HashSet::new();
            let mut seen_b = std::collections::HashSet::new();
            for p in &pairs {
                prop_assert!(seen_a.insert(p.a));
                prop_assert!(seen_b.insert(p.b));
                prop_assert!(p.iou >= t);
            }
            let total: f64 = pairs.iter().map(|p| p.iou).sum();
            prop_assert!(total >= t * pairs.len() as f64);
        }

        #[test]
        fn counter_grows_by_at_most_one(frames in proptest::collection::vec(proptest::collection::vec(arb_box(), 0..3), 1..60)) {
            let cfg = ValidatorConfig::default();
            let mut s = TrackState::default();
            for f in &frames {
                let before = s.consecutive_consistent;
                let dets: Vec<_> = f.iter().map(|b| Detection::drone(*b, 0.8)).collect();
                check_consistency(&mut s, &dets, &cfg);
                prop_assert!(s.consecutive_consistent <= before + 1);
            }
        }

        #[test]
        fn alert_count_obeys_latch_bound(pattern in proptest::collection::vec(0u8..3, 1..400),
                                         m in 1u32..5, k in 1u32..15) {
            let cfg = ValidatorConfig { consecutive_required: m, rearm_after: k, ..Default::default() };
            let still = [Detection::drone(bb(5.0, 5.0, 10.0, 10.0), 0.9)];
            let mut s = TrackState::default();
            let mut alerts = 0usize;
            for (i, kind) in pattern.iter().enumerate() {
                // 0: nothing, 1: stationary box, 2: box jumping to a fresh spot
                let jump = [Detection::drone(bb(20.0 * i as f64, 0.0, 10.0, 10.0), 0.9)];
                let dets: &[Detection] = match kind { 0 => &[], 1 => &still, _ => &jump };
                check_consistency(&mut s, dets, &cfg);
                alerts += alert_decision(&mut s, &cfg, i as u64, 0.0).is_some() as usize;
            }
            let n = pattern.len();
            let period = (m + k) as usize;
            prop_assert!(alerts <= n.div_ceil(period) + 1);
        }

        #[test]
        fn pass_rate_is_monotone(n_pass in 0usize..10, n_fail in 0usize..10) {
            let cfg = ValidatorConfig::default();
            let g = vec![bb(0.0, 0.0, 5.0, 5.0)];
            let mut gt = vec![g.clone(); n_pass];
            let mut pred = gt.clone();
            gt.extend(vec![g.clone(); n_fail]);
            pred.extend(vec![vec![]; n_fail]);
            let before = offline_validate(&pred, &gt, &cfg).unwrap().pass_rate;
            gt.push(g);
            pred.push(vec![]);
            let after = offline_validate(&pred, &gt, &cfg).unwrap().pass_rate;
            prop_assert!((0.0..=1.0).contains(&after));
            prop_assert!(after <= before);
        }
    }
}
