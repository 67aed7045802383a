//! Box overlap and greedy one-to-one matching.

use vbsf::geometry::{box_intersection, iou, BoundingBox};
use vbsf::validator::match_boxes;

fn main() {
    let a = BoundingBox::new(10.0, 10.0, 20.0, 10.0).unwrap();
    let b = BoundingBox::new(20.0, 12.0, 20.0, 10.0).unwrap();
    println!("a = {a:?}\nb = {b:?}");
    println!("intersection = {:?}", box_intersection(&a, &b));
    println!("iou = {:.4}", iou(&a, &b));

    let truth = [a, BoundingBox::new(60.0, 40.0, 8.0, 8.0).unwrap()];
    let predicted = [BoundingBox::new(61.0, 40.0, 8.0, 8.0).unwrap(), b];
    for pair in match_boxes(&truth, &predicted, 0.3) {
        println!(
            "truth {} <-> prediction {} (iou {:.3})",
            pair.a, pair.b, pair.iou
        );
    }
}
