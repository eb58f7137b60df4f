//! Thresholds one phantom label at every confidence level and prints the
//! foreground fraction per channel, then writes the mask images.
//!
//! cargo run --example threshold_sweep -- [out_dir] [seed]

use std::path::PathBuf;

use confseg::dataio::{save_cmap, save_pgm};
use confseg::experiment::threshold_sweep;
use confseg::label::{foreground_fraction, threshold_map, Channel, ConfidenceThreshold};
use confseg::phantom::{gen_image, PhantomSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = args.next().map_or_else(|| std::env::temp_dir().join("confseg-threshold_sweep"), PathBuf::from);
    let seed: u64 = args.next().map_or(Ok(3), |s| s.parse())?;
    std::fs::create_dir_all(&out)?;

    let (image, label) = gen_image(seed, &PhantomSpec::default())?;
    save_pgm(&image, &out.join("frame.pgm"))?;
    let cmap_path = out.join("frame.cmap");
    save_cmap(&label, &cmap_path)?;

    print!("{:<16}", "channel");
    for t in ConfidenceThreshold::ALL {
        print!("{:>9}", t.display_rule());
    }
    println!();
    for c in Channel::ALL {
        print!("{:<16}", c.name());
        for t in ConfidenceThreshold::ALL {
            print!("{:>9.4}", foreground_fraction(&threshold_map(&label, t), c.index())?);
        }
        println!();
    }
    let written = threshold_sweep(&cmap_path, &out.join("masks"))?;
    println!("wrote {} masks to {}", written.len(), out.join("masks").display());
    Ok(())
}
