//! Seeds a data directory with phantom frames (one of them pre-labelled) and
//! serves the annotation API on it.
//!
//! cargo run -p confseg-annotate --example annotate_server -- [data_dir] [bind]

use std::path::PathBuf;

use confseg::dataio::{save_cmap, save_pgm};
use confseg::phantom::{gen_image, PhantomSpec};
use confseg_annotate::{serve, ServiceConfig, DEFAULT_BIND};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let data = args.next().map_or_else(|| std::env::temp_dir().join("confseg-annotate_data"), PathBuf::from);
    let bind = args.next().unwrap_or_else(|| DEFAULT_BIND.into()).parse()?;
    std::fs::create_dir_all(data.join("images"))?;
    std::fs::create_dir_all(data.join("labels"))?;
    for seed in 0..4u64 {
        let (image, label) = gen_image(seed, &PhantomSpec::default())?;
        save_pgm(&image, &data.join("images").join(format!("frame{seed}.pgm")))?;
        if seed == 0 {
            save_cmap(&label, &data.join("labels").join("frame0.cmap"))?;
        }
    }
    println!("serving {} on http://{bind}/api/images", data.display());
    serve(ServiceConfig { bind, ..ServiceConfig::new(data) }).await?;
    Ok(())
}
