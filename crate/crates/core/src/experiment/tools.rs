use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::ExperimentError;
use crate::dataio::{load_cmap, save_pgm, GrayImage};
use crate::downstream::{EncoderSpec, SfChangeNet, SfRegressNet};
use crate::label::{compute_weights, threshold_map, Channel, ConfidenceMap, ConfidenceThreshold};
use crate::phantom::{gen_image, PhantomSpec};
use crate::segmodel::{SegModelSpec, TinyFpn};
use crate::tensornet::{gradient_check, ConvGeom, GradCheckReport, ParamStore, Tape, Tensor, TensorError, Var};

/// Writes one binary PGM (255 = foreground) per channel of `cmap_path`
/// thresholded at `level`.
pub fn threshold_tool(cmap_path: &Path, level: u8, out_dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    let t = ConfidenceThreshold::new(level)?;
    let cmap = load_cmap(cmap_path)?;
    write_masks(&cmap, t, &stem(cmap_path), out_dir)
}

/// [`threshold_tool`] at every level of the threshold grid.
pub fn threshold_sweep(cmap_path: &Path, out_dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    let cmap = load_cmap(cmap_path)?;
    let stem = stem(cmap_path);
    let mut out = Vec::new();
    for t in ConfidenceThreshold::ALL {
        out.extend(write_masks(&cmap, t, &stem, out_dir)?);
    }
    Ok(out)
}

fn stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("label").to_string()
}

fn write_masks(cmap: &ConfidenceMap, t: ConfidenceThreshold, stem: &str, out_dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    std::fs::create_dir_all(out_dir)?;
    let mask = threshold_map(cmap, t);
    let (w, h) = cmap.dims();
    Channel::ALL
        .iter()
        .map(|c| {
            let pixels = mask.plane(c.index()).iter().map(|&b| if b { 255 } else { 0 }).collect();
            let path = out_dir.join(format!("{stem}_t{:03}_{}.pgm", t.level(), c.name()));
            save_pgm(&GrayImage::new(w, h, pixels)?, &path)?;
            Ok(path)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub name: &'static str,
    pub report: GradCheckReport,
}

fn randn(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::from_vec(shape, data).expect("shape matches")
}

type LossFn = Box<dyn Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var, TensorError>>;

/// A scalar loss through `op`: MSE against a fixed random target.
fn through(
    store: &mut ParamStore<f64>,
    rng: &mut ChaCha8Rng,
    inputs: &[(&str, &[usize])],
    out_len: usize,
    op: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError> + 'static,
) -> LossFn {
    let ids: Vec<_> = inputs.iter().map(|(name, shape)| store.add(*name, randn(rng, shape, 1.0))).collect();
    let target: Vec<f64> = (0..out_len).map(|_| rng.sample(StandardNormal)).collect();
    Box::new(move |tape, s| {
        let vars: Vec<Var> = ids.iter().map(|&id| tape.param(s, id)).collect();
        let y = op(tape, &vars)?;
        tape.mse(y, &target)
    })
}

/// Finite-difference checks of every tape primitive and of the end-to-end
/// models, in 64-bit arithmetic.
pub fn gradcheck_suite(seed: u64, tolerance: f64) -> Result<Vec<GradCheckEntry>, ExperimentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases: Vec<(&'static str, ParamStore<f64>, LossFn)> = Vec::new();
    macro_rules! case {
        ($name:expr, $inputs:expr, $out:expr, $op:expr) => {{
            let mut store = ParamStore::new();
            let loss = through(&mut store, &mut rng, $inputs, $out, $op);
            cases.push(($name, store, loss));
        }};
    }
    case!("conv2d 3x3 same", &[("x", &[2, 3, 5, 5]), ("w", &[4, 3, 3, 3]), ("b", &[4])], 2 * 4 * 25, |t, v| {
        t.conv2d(v[0], v[1], Some(v[2]), ConvGeom::same(3))
    });
    case!("conv2d 3x3 stride 2", &[("x", &[2, 2, 6, 6]), ("w", &[3, 2, 3, 3]), ("b", &[3])], 2 * 3 * 9, |t, v| {
        t.conv2d(v[0], v[1], Some(v[2]), ConvGeom::strided(2, 3))
    });
    case!("conv2d 1x1", &[("x", &[1, 3, 4, 4]), ("w", &[2, 3, 1, 1])], 2 * 16, |t, v| {
        t.conv2d(v[0], v[1], None, ConvGeom::same(1))
    });
    case!("relu", &[("x", &[3, 7])], 21, |t, v| Ok(t.relu(v[0])));
    case!("sigmoid", &[("x", &[3, 7])], 21, |t, v| Ok(t.sigmoid(v[0])));
    case!("linear", &[("x", &[4, 5]), ("w", &[3, 5]), ("b", &[3])], 12, |t, v| t.linear(v[0], v[1], Some(v[2])));
    case!("upsample2", &[("x", &[2, 2, 3, 3])], 2 * 2 * 36, |t, v| t.upsample2(v[0]));
    case!("add and sub", &[("a", &[2, 6]), ("b", &[2, 6])], 12, |t, v| {
        let s = t.add(v[0], v[1])?;
        let d = t.sub(s, v[1])?;
        let d = t.sub(d, v[1])?;
        Ok(t.scale(d, 0.7))
    });
    case!("global_avg_pool", &[("x", &[2, 3, 4, 4])], 6, |t, v| t.global_avg_pool(v[0]));
    case!("mean_rows", &[("x", &[5, 3])], 3, |t, v| t.mean_rows(v[0]));
    case!("temporal_shift", &[("x", &[3, 8, 2, 2])], 3 * 8 * 4, |t, v| t.temporal_shift(v[0], 0.125));

    {
        let mut store = ParamStore::new();
        let z = store.add("z", randn(&mut rng, &[2, 6, 3, 3], 2.0));
        let y: Vec<f64> = (0..108).map(|_| if rng.random_bool(0.3) { 1.0 } else { 0.0 }).collect();
        let w: Vec<f64> = (0..108).map(|_| rng.random_range(0.2..1.0)).collect();
        cases.push(("weighted bce", store, Box::new(move |t, s| {
            let zv = t.param(s, z);
            t.bce_with_logits(zv, &y, Some(&w))
        })));
    }
    {
        let mut store = ParamStore::new();
        let z = store.add("z", randn(&mut rng, &[4, 3], 1.5));
        cases.push(("softmax cross-entropy", store, Box::new(move |t, s| {
            let zv = t.param(s, z);
            t.softmax_ce(zv, &[0, 2, 1, 2])
        })));
    }
    case!("mse", &[("x", &[6])], 6, |_, v| Ok(v[0]));

    {
        let spec = SegModelSpec { width: 16, height: 16, encoder_widths: [4, 6, 8], lateral_width: 4 };
        let mut store = ParamStore::new();
        let net = TinyFpn::new(spec, &mut store, &mut rng)?;
        let pspec = PhantomSpec { width: 24, height: 32, ..PhantomSpec::default() };
        let (image, label) = gen_image(seed, &pspec)?;
        let crop = |v: &[u8], ch: usize| -> Vec<u8> {
            (0..16).flat_map(|y| (0..16).map(move |x| (y + 10, x + 4))).map(|(y, x)| v[ch * 24 * 32 + y * 24 + x]).collect()
        };
        let x: Vec<f64> = crop(image.pixels(), 0).into_iter().map(|p| f64::from(p) / 255.0).collect();
        let values: Vec<u8> = (0..6).flat_map(|c| crop(label.values(), c)).collect();
        let label = ConfidenceMap::from_values(16, 16, values)?;
        let t60 = ConfidenceThreshold::new(60)?;
        let mask = threshold_map(&label, t60);
        let weights = compute_weights(&label, t60, &mask)?;
        let y: Vec<f64> = mask.bits().iter().map(|&b| f64::from(u8::from(b))).collect();
        let w = weights.values().to_vec();
        let input = Tensor::from_vec(&[1, 1, 16, 16], x)?;
        cases.push(("tiny FPN + weighted bce", store, Box::new(move |t, s| {
            let xv = t.input(input.clone());
            let z = net.forward(t, s, xv)?;
            t.bce_with_logits(z, &y, Some(&w))
        })));
    }
    {
        let enc = EncoderSpec { widths: [8, 8], shift_fraction: 0.125 };
        let (net, store) = SfChangeNet::init::<f64>(enc.clone(), seed);
        let a = randn(&mut rng, &[3, 7, 8, 8], 0.5);
        let b = randn(&mut rng, &[3, 7, 8, 8], 0.5);
        cases.push(("video encoder + change head", store, Box::new(move |t, s| {
            let (av, bv) = (t.input(a.clone()), t.input(b.clone()));
            let (z, _) = net.forward(t, s, av, bv)?;
            t.softmax_ce(z, &[2])
        })));
        let (reg, store) = SfRegressNet::init::<f64>(enc, seed + 1);
        let v = randn(&mut rng, &[2, 7, 8, 8], 0.5);
        cases.push(("video encoder + regression head", store, Box::new(move |t, s| {
            let x = t.input(v.clone());
            let y = reg.forward(t, s, x)?;
            t.mse(y, &[0.4])
        })));
    }

    cases
        .into_iter()
        .map(|(name, store, loss)| Ok(GradCheckEntry { name, report: gradient_check(&store, loss, tolerance)? }))
        .collect()
}
