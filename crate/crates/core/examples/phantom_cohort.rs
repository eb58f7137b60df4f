//! Generates a synthetic cohort on disk and prints its planted structure.
//!
//! cargo run --example phantom_cohort -- [out_dir] [patients] [seed]

use std::path::PathBuf;

use confseg::dataio::split_folds;
use confseg::phantom::{gen_cohort, PhantomSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = args.next().map_or_else(|| std::env::temp_dir().join("confseg-phantom_cohort"), PathBuf::from);
    let patients: usize = args.next().map_or(Ok(12), |s| s.parse())?;
    let seed: u64 = args.next().map_or(Ok(0), |s| s.parse())?;

    let manifest = gen_cohort(seed, patients, &PhantomSpec::default(), &out)?;
    println!("{} patients, {} videos in {}", manifest.patients.len(), manifest.video_count(), out.display());
    for p in manifest.patients.iter().take(4) {
        let days: Vec<String> = p
            .days
            .iter()
            .map(|d| format!("day {}: burden {} sf {:.3}", d.day_index, d.planted.unwrap().b_line_burden, d.sf_ratio_normalized))
            .collect();
        println!("  {} readmitted={} | {}", p.patient_id, p.readmission_flag, days.join(" | "));
    }
    let split = split_folds(&manifest, 5, patients / 5, seed)?;
    split.save(&out.join("folds.json"))?;
    println!("held-out test patients: {}", split.held_out_test.join(", "));
    Ok(())
}
