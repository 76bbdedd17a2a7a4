//! Accumulates a confusion matrix and reports per-class, mean and weighted IoU.

use stwarp::metrics::{class_weights, iou_from_confusion, ConfusionMatrix, DEFAULT_EPSILON};

fn main() -> stwarp::Result<()> {
    let truth = [0u8, 0, 0, 0, 0, 0, 1, 1, 1, 2];
    let pred = [0u8, 0, 0, 0, 0, 1, 1, 1, 2, 2];
    let mut cm = ConfusionMatrix::new(3);
    cm.accumulate(&truth, &pred)?;

    let r = iou_from_confusion(&cm, None)?;
    println!("per class {:?}", r.per_class_iou);
    println!("mIoU {:.2}  wIoU {:.2}", r.miou, r.wiou);

    let w = class_weights(&cm.truth_areas(), DEFAULT_EPSILON)?;
    println!("class weights {:?}", w.weights);
    Ok(())
}
