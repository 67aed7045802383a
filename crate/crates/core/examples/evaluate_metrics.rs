//! Confusion counts, derived metrics, ROC/AUC and k-fold cross-validation
//! on a synthetic patch corpus. Writes `roc.svg` to the given directory.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vbsf::detector::{default_training_config, extract_features, train, LabeledPatch};
use vbsf::metrics::{confusion, cross_validate, metrics, roc};
use vbsf::plot::{line_plot, Series};
use vbsf::synth::{render_patch, ObjectKind};

fn corpus(n: usize, seed: u64) -> Vec<LabeledPatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let kind = [
                ObjectKind::Drone,
                ObjectKind::Bird,
                ObjectKind::Drone,
                ObjectKind::Plane,
            ][i % 4];
            let bg = rng.random_range(10..=60);
            let (f, b) = render_patch(kind, bg, 200, 5.0, (8.0, 18.0), &mut rng);
            LabeledPatch {
                features: extract_features(&f, &b, None).unwrap(),
                label: (kind == ObjectKind::Drone) as u8,
            }
        })
        .collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| ".".into()));
    let (train_set, test_set) = (corpus(400, 1), corpus(200, 2));
    let model = train(&train_set, &default_training_config().with_seed(4))?.classifier;

    let scores: Vec<f64> = test_set
        .iter()
        .map(|p| model.predict(&p.features))
        .collect();
    let labels: Vec<u8> = test_set.iter().map(|p| p.label).collect();
    let counts = confusion(&scores, &labels, 0.5)?;
    let m = metrics(&counts);
    println!("{counts:?}");
    println!(
        "accuracy {:.4} precision {:.4} recall {:.4} f1 {:.4}",
        m.accuracy, m.precision, m.recall, m.f1
    );

    let curve = roc(&scores, &labels)?;
    println!(
        "auc {:.4} over {} thresholds",
        curve.auc,
        curve.points.len()
    );
    let points = curve.points.iter().map(|p| (p.fpr, p.tpr)).collect();
    let svg = line_plot(
        "ROC",
        "false positive rate",
        "true positive rate",
        &[Series {
            name: "model",
            points,
        }],
        Some((0.0, 1.0)),
        Some((0.0, 1.0)),
    );
    std::fs::write(out.join("roc.svg"), svg)?;

    let cv = cross_validate(&train_set, 4, &default_training_config().with_seed(5))?;
    println!(
        "4-fold accuracy {:.4} ± {:.4}, f1 {:.4} ± {:.4}",
        cv.accuracy.mean, cv.accuracy.std, cv.f1.mean, cv.f1.std
    );
    Ok(())
}
