//! Scores a blurred copy of a phantom label against the original with every
//! segmentation metric at every threshold.
//!
//! cargo run --example metrics_report

use confseg::label::{compute_weights, threshold_map, ConfidenceThreshold};
use confseg::metrics::{iou, soft_ce, trimap_loss, weighted_ce, ProbMap};
use confseg::phantom::{gen_image, PhantomSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (_, label) = gen_image(5, &PhantomSpec::default())?;
    let (w, h) = label.dims();
    let probs: Vec<f64> = label.values().iter().map(|&v| 0.1 + 0.8 * f64::from(v) / 100.0).collect();
    let pred = ProbMap::new(w, h, probs)?;

    println!("soft CE {:.4}   trimap loss {:.4}", soft_ce(&pred, &label)?, trimap_loss(&pred, &label)?);
    println!("{:>9} {:>9} {:>12}", "threshold", "IoU", "weighted CE");
    for t in ConfidenceThreshold::ALL {
        let gt = threshold_map(&label, t);
        let weights = compute_weights(&label, t, &gt)?;
        let scores = iou(&pred.binarize(0.5), &gt)?;
        println!("{:>9} {:>9.4} {:>12.4}", t.display_rule(), scores.macro_iou, weighted_ce(&pred, &gt, &weights)?);
    }
    Ok(())
}
