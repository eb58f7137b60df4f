//! Trains one segmenter at a chosen confidence threshold on a small
//! phantom cohort and reports held-out scores.
//!
//! cargo run --release --example train_segmenter -- [threshold] [epochs] [patients]

use confseg::dataio::split_folds;
use confseg::experiment::{evaluate_segmenter, seg_examples};
use confseg::label::{Channel, ConfidenceThreshold};
use confseg::phantom::{gen_cohort_data, PhantomSpec};
use confseg::segmodel::{train_seg, SegModelSpec, SegTrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let threshold = ConfidenceThreshold::new(args.next().map_or(Ok(60), |s| s.parse())?)?;
    let epochs: usize = args.next().map_or(Ok(10), |s| s.parse())?;
    let patients: usize = args.next().map_or(Ok(20), |s| s.parse())?;

    let data = gen_cohort_data(1, patients, &PhantomSpec::default())?;
    let split = split_folds(&data.manifest, 5, patients / 5, 1)?;
    let train = seg_examples(&data, &split.train_patients(0));
    let val = seg_examples(&data, &split.val_patients(0));
    let test = seg_examples(&data, &split.held_out_test);

    let config = SegTrainConfig { threshold, epochs, ..SegTrainConfig::desk() };
    let out = train_seg(&config, &SegModelSpec::default(), &train, &val)?;
    for r in &out.curves {
        println!("epoch {:>3}  loss {:.4}  val IoU {:.4}  lr {:.2e}", r.epoch, r.train_loss, r.val_iou, r.lr);
    }
    let s = evaluate_segmenter(&out.model, &test, threshold)?;
    println!("best epoch {}; test IoU {:.4}, weighted CE {:.4}, soft CE {:.4}", out.best_epoch, s.iou, s.weighted_ce, s.soft_ce);
    for c in Channel::ALL {
        if let Some(v) = s.channel_iou[c.index()] {
            println!("  {:<16} IoU {v:.4}", c.name());
        }
    }
    Ok(())
}
