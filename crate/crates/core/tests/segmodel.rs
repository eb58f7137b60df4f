use confseg::dataio::GrayImage;
use confseg::label::{threshold_map, Channel, ConfidenceMap, ConfidenceThreshold};
use confseg::metrics::iou;
use confseg::phantom::{gen_cohort_in_memory, gen_image, PhantomSpec};
use confseg::segmodel::{
    images_to_tensor, infer_seg, seg_batch_loss, train_seg, AugmentConfig, AugmentDraw, SegExample, SegModel,
    SegModelSpec, SegTrainConfig,
};
use confseg::tensornet::Tape;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_spec() -> (PhantomSpec, SegModelSpec) {
    let phantom = PhantomSpec { width: 32, height: 32, frames: 1, ..PhantomSpec::default() };
    let model = SegModelSpec { width: 32, height: 32, encoder_widths: [6, 8, 12], lateral_width: 8 };
    (phantom, model)
}

fn examples(seed: u64, patients: usize, spec: &PhantomSpec) -> Vec<SegExample> {
    gen_cohort_in_memory(seed, patients, spec)
        .unwrap()
        .into_iter()
        .flat_map(|p| p.videos)
        .map(|v| SegExample { image: v.frames[0].clone(), label: v.label })
        .collect()
}

fn t(level: u8) -> ConfidenceThreshold {
    ConfidenceThreshold::new(level).unwrap()
}

#[test]
fn zero_head_predicts_one_half() {
    let spec = SegModelSpec::default();
    let mut model = SegModel::init(spec, 3).unwrap();
    model.net.zero_head(&mut model.params);
    let (image, _) = gen_image(1, &PhantomSpec::default()).unwrap();
    let (probs, mask) = infer_seg(&model, &image).unwrap();
    assert!(probs.values().iter().all(|&p| p == 0.5));
    assert!(mask.bits().iter().all(|&b| b));
}

#[test]
fn image_and_label_share_geometry() {
    let (w, h) = (40, 30);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for axis in 0..2 {
        let ramp = |x: usize, y: usize| if axis == 0 { x + 1 } else { y + 1 };
        let image = GrayImage::new(w, h, (0..w * h).map(|i| (4 * ramp(i % w, i / w)) as u8).collect()).unwrap();
        let mut cmap = ConfidenceMap::zeros(w, h).unwrap();
        for y in 0..h {
            for x in 0..w {
                cmap.set(Channel::SharpPleura, x, y, ramp(x, y) as u8);
            }
        }
        for _ in 0..20 {
            let config = AugmentConfig { intensity: false, ..AugmentConfig::default() };
            let draw = AugmentDraw::sample(&config, &mut rng);
            let (img, lab) = draw.apply(&image, &cmap);
            let mut compared = 0;
            for y in 0..h {
                for x in 0..w {
                    let (pi, pl) = (img.get(x, y), lab.get(Channel::SharpPleura, x, y));
                    if pi == 0 || pl == 0 {
                        continue;
                    }
                    let from_image = f64::from(pi) / 4.0;
                    assert!((from_image - f64::from(pl)).abs() <= 0.75, "{draw:?} at ({x},{y}): {from_image} vs {pl}");
                    compared += 1;
                }
            }
            assert!(compared > w * h / 2);
        }
    }
}

#[test]
fn flip_mirrors_columns() {
    let (image, cmap) = gen_image(4, &PhantomSpec::default()).unwrap();
    let draw = AugmentDraw { flip: true, ..AugmentDraw::IDENTITY };
    let (img, lab) = draw.apply(&image, &cmap);
    let w = image.width();
    for y in 0..image.height() {
        for x in 0..w {
            assert_eq!(img.get(x, y), image.get(w - 1 - x, y));
            for c in Channel::ALL {
                assert_eq!(lab.get(c, x, y), cmap.get(c, w - 1 - x, y));
            }
        }
    }
}

#[test]
fn unit_weights_reproduce_unweighted_loss() {
    let (phantom, spec) = small_spec();
    let batch: Vec<_> = examples(2, 6, &phantom).into_iter().take(4).map(|e| (e.image, e.label)).collect();
    let model = SegModel::init(spec, 1).unwrap();
    for level in [0, 60, 100] {
        let mut tape = Tape::new();
        let plain = seg_batch_loss(&mut tape, &model.net, &model.params, &batch, t(level), false).unwrap();
        let plain_grads = tape.backward(plain, &model.params).unwrap();
        let plain = tape.value(plain).item();

        let mut tape = Tape::new();
        let images: Vec<&GrayImage> = batch.iter().map(|(i, _)| i).collect();
        let x = tape.input(images_to_tensor(&images).unwrap());
        let logits = model.net.forward(&mut tape, &model.params, x).unwrap();
        let targets: Vec<f32> = batch
            .iter()
            .flat_map(|(_, l)| threshold_map(l, t(level)).bits().to_vec())
            .map(|b| if b { 1.0 } else { 0.0 })
            .collect();
        let ones = vec![1.0f32; targets.len()];
        let unit = tape.bce_with_logits(logits, &targets, Some(&ones)).unwrap();
        let unit_grads = tape.backward(unit, &model.params).unwrap();
        assert!((tape.value(unit).item() - plain).abs() <= 1e-6);
        for id in model.params.ids() {
            let (a, b) = (plain_grads.get(id).unwrap().data(), unit_grads.get(id).unwrap().data());
            assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-6));
        }
    }
}

fn quick_config(epochs: usize) -> SegTrainConfig {
    SegTrainConfig { epochs, lr: 3e-3, batch_size: 8, seed: 5, ..SegTrainConfig::default() }
}

#[test]
fn training_is_deterministic_and_keeps_best_epoch() {
    let (phantom, spec) = small_spec();
    let all = examples(6, 6, &phantom);
    let (train, val) = all.split_at(48);
    let config = quick_config(6);
    let a = train_seg(&config, &spec, train, val).unwrap();
    let b = train_seg(&config, &spec, train, val).unwrap();
    assert_eq!(a.curves, b.curves);
    assert_eq!(a.model.params.iter().collect::<Vec<_>>(), b.model.params.iter().collect::<Vec<_>>());

    let best = a.curves.iter().map(|r| r.val_iou).fold(f64::NEG_INFINITY, f64::max);
    let first_best = a.curves.iter().position(|r| r.val_iou == best).unwrap();
    assert_eq!(a.best_epoch, first_best);

    let images: Vec<&GrayImage> = val.iter().map(|e| &e.image).collect();
    let probs = a.model.predict(&images).unwrap();
    let rescored: f64 = probs
        .iter()
        .zip(val)
        .map(|(p, e)| iou(&p.binarize(0.5), &threshold_map(&e.label, config.threshold)).unwrap().macro_iou)
        .sum::<f64>()
        / val.len() as f64;
    assert!((rescored - best).abs() < 1e-12, "{rescored} vs {best}");
}

#[test]
fn top_threshold_without_certain_pixels_trains() {
    let (phantom, spec) = small_spec();
    let capped: Vec<SegExample> = examples(7, 6, &phantom)
        .into_iter()
        .take(16)
        .map(|e| {
            let values = e.label.values().iter().map(|&v| v.min(80)).collect();
            let (w, h) = e.label.dims();
            SegExample { image: e.image, label: ConfidenceMap::from_values(w, h, values).unwrap() }
        })
        .collect();
    let config = SegTrainConfig { threshold: t(100), ..quick_config(3) };
    let out = train_seg(&config, &spec, &capped[..12], &capped[12..]).unwrap();
    assert!(out.curves.iter().all(|r| r.train_loss.is_finite() && (0.0..=1.0).contains(&r.val_iou)));
}

#[test]
fn overfits_a_single_image() {
    let (phantom, spec) = small_spec();
    let one = examples(9, 6, &phantom).swap_remove(0);
    let train = vec![one.clone(); 8];
    let config = SegTrainConfig { augment: AugmentConfig::NONE, batch_size: 1, ..quick_config(60) };
    let out = train_seg(&config, &spec, &train, std::slice::from_ref(&one)).unwrap();
    let (_, mask) = infer_seg(&out.model, &one.image).unwrap();
    let score = iou(&mask, &threshold_map(&one.label, config.threshold)).unwrap().macro_iou;
    assert!(score >= 0.9, "macro IoU {score}");
}

#[test]
fn flip_consistency_is_reported() {
    let (phantom, spec) = small_spec();
    let model = SegModel::init(spec, 2).unwrap();
    let ex = examples(3, 6, &phantom).swap_remove(0);
    let flip = AugmentDraw { flip: true, ..AugmentDraw::IDENTITY };
    let (flipped, _) = flip.apply(&ex.image, &ex.label);
    let (p, _) = infer_seg(&model, &ex.image).unwrap();
    let (pf, _) = infer_seg(&model, &flipped).unwrap();
    let (w, h) = ex.image.dims();
    let mut diff = 0.0;
    for c in 0..6 {
        for y in 0..h {
            for x in 0..w {
                diff += (p.plane(c)[y * w + x] - pf.plane(c)[y * w + w - 1 - x]).abs();
            }
        }
    }
    let mean = diff / (6 * w * h) as f64;
    println!("flip consistency: mean |infer(flip x) - flip(infer x)| = {mean:.4}");
    assert!(mean.is_finite());
}
