//! Recovers the planted burden-to-S/F link from oracle segmentations and
//! compares against a model that sees no segmentation.
//!
//! cargo run --release --example sf_regression -- [seed] [patients] [epochs]

use confseg::dataio::split_folds;
use confseg::downstream::{
    day_rmse, fuse_videos, predict_days, train_sf_regress, video_targets, Aggregation, SegSource, TaskTrainConfig,
};
use confseg::label::ConfidenceThreshold;
use confseg::phantom::{gen_cohort_data, PhantomSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(Ok(1), |s| s.parse())?;
    let n: usize = args.next().map_or(Ok(40), |s| s.parse())?;
    let epochs: usize = args.next().map_or(Ok(10), |s| s.parse())?;

    let data = gen_cohort_data(seed, n, &PhantomSpec::default())?;
    let split = split_folds(&data.manifest, 4, n / 5, seed)?;
    let train = video_targets(&data.manifest, &split.train_patients(0));
    let val = video_targets(&data.manifest, &split.val_patients(0));
    let test = video_targets(&data.manifest, &split.held_out_test);
    let ids: Vec<String> = data.refs().into_iter().map(|r| r.video_id).collect();
    let config = TaskTrainConfig { epochs, seed, ..TaskTrainConfig::default() };

    for source in [SegSource::Oracle(ConfidenceThreshold::new(60)?), SegSource::Zero] {
        let bank = fuse_videos(&data, ids.iter().map(String::as_str), source, None, config.downsample)?;
        let model = train_sf_regress(&config, &bank, &train, &val)?;
        let days = predict_days(&model.net, &model.params, &bank, &test)?;
        let scores: Vec<String> = Aggregation::ALL
            .iter()
            .map(|&m| Ok(format!("{} {:.4}", m.name(), day_rmse(&days, m)?)))
            .collect::<Result<_, confseg::downstream::DownstreamError>>()?;
        println!("{source:?}: test RMSE {}", scores.join(", "));
    }
    Ok(())
}
