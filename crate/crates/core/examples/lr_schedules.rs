//! Prints the learning-rate schedules used by the trainers.
//!
//! cargo run --example lr_schedules -- [steps]

use confseg::tensornet::LrSchedule;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps: u64 = std::env::args().nth(1).map_or(Ok(70), |s| s.parse())?;
    let schedules = [
        ("constant", LrSchedule::Constant { lr: 1e-4 }),
        ("cosine", LrSchedule::Cosine { lr_max: 3e-3, lr_min: 0.0, period: steps }),
        ("warm restarts", LrSchedule::CosineWarmRestarts { lr_max: 1e-4, lr_min: 0.0, period: 10, multiplier: 2.0 }),
    ];
    print!("{:>5}", "step");
    for (name, _) in &schedules {
        print!("{name:>15}");
    }
    println!();
    for step in (0..=steps).step_by(5) {
        print!("{step:>5}");
        for (_, s) in &schedules {
            print!("{:>15.3e}", s.lr_at(step));
        }
        println!();
    }
    Ok(())
}
