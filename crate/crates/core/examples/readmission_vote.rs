//! Shows the per-view majority vote with its logit-sum tie-break, then
//! runs an untrained readmission model over a few phantom patients.
//!
//! cargo run --example readmission_vote

use confseg::downstream::{
    fuse_videos, majority_vote, readmission_cases, readmission_predict, EncoderSpec, ReadmissionNet, SegSource,
};
use confseg::label::ConfidenceThreshold;
use confseg::phantom::{gen_cohort_data, PhantomSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let clear = [[0.0, 1.0], [0.0, 1.0], [1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]];
    let tied = [[0.0, 1.2], [0.0, 1.0], [0.0, 1.0], [0.9, 0.0], [1.0, 0.0], [1.0, 0.0]];
    println!("4 of 6 views vote yes -> readmitted {}", majority_vote(&clear)?);
    println!("3 vs 3, logit sums 3.2 vs 2.9 -> readmitted {}", majority_vote(&tied)?);

    let spec = PhantomSpec { frames: 4, ..PhantomSpec::default() };
    let data = gen_cohort_data(2, 6, &spec)?;
    let ids: Vec<String> = data.refs().into_iter().map(|r| r.video_id).collect();
    let bank = fuse_videos(&data, ids.iter().map(String::as_str), SegSource::Oracle(ConfidenceThreshold::new(60)?), None, 2)?;
    let (net, params) = ReadmissionNet::init::<f32>(EncoderSpec::default(), 0);
    let patients: Vec<String> = data.manifest.patients.iter().map(|p| p.patient_id.clone()).collect();
    for case in readmission_cases(&data.manifest, &patients)? {
        let pred = readmission_predict(&net, &params, &bank, &case)?;
        let votes: String = pred.view_logits.iter().map(|l| if l[1] > l[0] { '1' } else { '0' }).collect();
        println!("{}: votes {votes} -> predicted {} (actual {})", case.patient_id, pred.readmitted, case.readmitted);
    }
    Ok(())
}
