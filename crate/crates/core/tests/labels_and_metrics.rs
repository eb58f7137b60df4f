use confseg::dataio::{decode_cmap, decode_pgm, encode_cmap, encode_pgm, split_folds, DataError, GrayImage};
use confseg::label::{
    compute_weights, foreground_fraction, threshold_map, trimap_select, BinaryMaskStack, Channel, ConfidenceMap,
    ConfidenceThreshold,
};
use confseg::metrics::{
    classification_scores, iou, rmse, soft_ce, trimap_loss, weighted_ce, MetricError, ProbMap, EPS,
};
use confseg::phantom::{gen_cohort_data, PhantomSpec};

fn t(level: u8) -> ConfidenceThreshold {
    ConfidenceThreshold::new(level).unwrap()
}

fn plane_map(w: usize, h: usize, plane: &[u8]) -> ConfidenceMap {
    ConfidenceMap::from_plane(w, h, Channel::ALL[0], plane).unwrap()
}

fn plane_mask(w: usize, h: usize, plane: &[bool]) -> BinaryMaskStack {
    let mut m = BinaryMaskStack::zeros(w, h);
    m.plane_mut(0).copy_from_slice(plane);
    m
}

fn plane_probs(w: usize, h: usize, plane: &[f64]) -> ProbMap {
    let mut v = vec![0.0; 6 * w * h];
    v[..w * h].copy_from_slice(plane);
    ProbMap::new(w, h, v).unwrap()
}

fn close(a: f64, b: f64, tol: f64) {
    assert!((a - b).abs() <= tol, "{a} vs {b}");
}

#[test]
fn threshold_rules_on_a_two_by_two_plane() {
    let cmap = plane_map(2, 2, &[0, 30, 60, 100]);
    for (level, want) in [(50, [false, false, true, true]), (0, [false, true, true, true]), (100, [false, false, false, true])] {
        assert_eq!(threshold_map(&cmap, t(level)).plane(0), &want, "t={level}");
    }
}

#[test]
fn weights_follow_the_background_rule() {
    for (plane, level, want) in [([0u8, 60], 60, [0.6, 0.6]), ([0, 100], 100, [0.8, 1.0]), ([0, 40], 0, [0.8, 0.4])] {
        let cmap = plane_map(2, 1, &plane);
        let mask = threshold_map(&cmap, t(level));
        assert_eq!(mask.plane(0), &[false, true]);
        let w = compute_weights(&cmap, t(level), &mask).unwrap();
        close(w.values()[0], want[0], 1e-12);
        close(w.values()[1], want[1], 1e-12);
    }
}

#[test]
fn trimap_keeps_only_certain_pixels() {
    let tri = trimap_select(&plane_map(3, 1, &[0, 50, 100]));
    assert_eq!(&tri.certain()[..3], &[true, false, true]);
    assert_eq!((tri.target(0), tri.target(1), tri.target(2)), (Some(0.0), None, Some(1.0)));

    let zeros = trimap_select(&ConfidenceMap::zeros(4, 4).unwrap());
    assert_eq!(zeros.certain_count(), 6 * 16);
    assert!((0..6 * 16).all(|i| zeros.target(i) == Some(0.0)));

    let uncertain = ConfidenceMap::from_values(2, 2, vec![50; 24]).unwrap();
    assert_eq!(trimap_select(&uncertain).certain_count(), 0);
}

#[test]
fn foreground_fractions() {
    close(foreground_fraction(&plane_mask(2, 2, &[true; 4]), 0).unwrap(), 1.0, 0.0);
    close(foreground_fraction(&plane_mask(2, 2, &[false, false, false, true]), 0).unwrap(), 0.25, 0.0);
    close(foreground_fraction(&plane_mask(2, 2, &[false; 4]), 0).unwrap(), 0.0, 0.0);
}

#[test]
fn cmap_bytes_and_errors() {
    let zero = ConfidenceMap::zeros(1, 1).unwrap();
    let bytes = encode_cmap(&zero);
    assert_eq!(bytes.len(), 17 + 6);
    assert_eq!(decode_cmap(&bytes).unwrap(), zero);

    let mut bad = bytes.clone();
    bad[17] = 101;
    assert!(matches!(decode_cmap(&bad), Err(DataError::ValueOutOfRange(101))));
}

#[test]
fn pgm_bytes_and_errors() {
    let img = GrayImage::new(2, 2, vec![0, 255, 128, 7]).unwrap();
    assert_eq!(decode_pgm(&encode_pgm(&img)).unwrap(), img);

    let mut short = b"P5\n3 3\n255\n".to_vec();
    short.extend([1u8; 8]);
    assert!(matches!(decode_pgm(&short), Err(DataError::Truncated(_))));

    let mut deep = b"P5\n1 1\n65535\n".to_vec();
    deep.extend([0u8; 2]);
    assert!(matches!(decode_pgm(&deep), Err(DataError::UnsupportedDepth(65535))));
}

#[test]
fn fold_sizes_for_forty_two_patients() {
    let spec = PhantomSpec { width: 32, height: 32, frames: 1, ..PhantomSpec::default() };
    let data = gen_cohort_data(4, 42, &spec).unwrap();
    let split = split_folds(&data.manifest, 6, 4, 11).unwrap();
    assert_eq!(split.held_out_test.len(), 4);
    assert_eq!(split.folds.len(), 5);
    assert_eq!(split.folds.iter().map(Vec::len).sum::<usize>(), 38);
    assert_eq!(split, split_folds(&data.manifest, 6, 4, 11).unwrap());

    let mut small = data.manifest.clone();
    small.patients.truncate(5);
    assert!(matches!(split_folds(&small, 6, 0, 11), Err(DataError::TooFewPatients { have: 5, .. })));
}

#[test]
fn iou_examples() {
    let a = plane_mask(2, 2, &[true, true, false, false]);
    let b = plane_mask(2, 2, &[true, false, true, false]);
    close(iou(&a, &a).unwrap().macro_iou, 1.0, 0.0);
    let disjoint = plane_mask(2, 2, &[false, false, true, true]);
    close(iou(&a, &disjoint).unwrap().macro_iou, 0.0, 0.0);
    close(iou(&a, &b).unwrap().per_channel[0].unwrap(), 1.0 / 3.0, 1e-15);
}

#[test]
fn weighted_ce_examples() {
    let cmap = plane_map(1, 1, &[100]);
    let gt = plane_mask(1, 1, &[true]);
    let w = compute_weights(&cmap, t(100), &gt).unwrap();
    let one_pixel = |p: f64| weighted_ce(&plane_probs(1, 1, &[p]), &gt, &w).unwrap() * 6.0;
    close(one_pixel(0.5), std::f64::consts::LN_2, 1e-6);
    assert!(one_pixel(1.0) <= 7.0 * EPS);

    let cmap = plane_map(1, 1, &[0]);
    let bg = plane_mask(1, 1, &[false]);
    let w = compute_weights(&cmap, t(100), &bg).unwrap();
    let ce = weighted_ce(&plane_probs(1, 1, &[0.1]), &bg, &w).unwrap() * 6.0;
    close(ce, -0.8 * (0.9f64).ln(), 1e-6);
    close(ce, 0.0843, 5e-5);
}

#[test]
fn soft_ce_examples() {
    let single = |c: u8, p: f64| soft_ce(&plane_probs(1, 1, &[p]), &plane_map(1, 1, &[c])).unwrap() * 6.0;
    close(single(50, 0.5), std::f64::consts::LN_2, 1e-6);
    assert!(single(100, 1.0) <= 7.0 * EPS);
    let h = single(60, 0.6);
    close(h, -(0.6 * 0.6f64.ln() + 0.4 * 0.4f64.ln()), 1e-6);
    close(h, 0.6730, 5e-5);
    for k in 1..100 {
        assert!(single(60, f64::from(k) / 100.0) >= h - 1e-12);
    }
}

#[test]
fn trimap_loss_examples() {
    let certain = ConfidenceMap::from_values(2, 1, [0, 100].repeat(6)).unwrap();
    let pred = ProbMap::new(2, 1, (0..12).map(|i| 0.05 + 0.07 * f64::from(i)).collect()).unwrap();
    close(trimap_loss(&pred, &certain).unwrap(), soft_ce(&pred, &certain).unwrap(), 1e-12);

    let uncertain = ConfidenceMap::from_values(2, 1, vec![50; 12]).unwrap();
    assert!(matches!(trimap_loss(&pred, &uncertain), Err(MetricError::Undefined(_))));

    let mut values = vec![0u8; 18];
    values[..3].copy_from_slice(&[0, 50, 100]);
    let mut probs = vec![0.0; 18];
    probs[..3].copy_from_slice(&[0.1, 0.9, 0.8]);
    let cmap = ConfidenceMap::from_values(3, 1, values).unwrap();
    let pred = ProbMap::new(3, 1, probs).unwrap();
    let mut other = cmap.clone();
    other.plane_mut(Channel::ALL[0]).copy_from_slice(&[50, 50, 50]);
    let rest = trimap_loss(&pred, &other).unwrap() * 15.0;
    let oracle = (-(0.9f64).ln() - (0.8f64).ln() + rest) / 17.0;
    close(trimap_loss(&pred, &cmap).unwrap(), oracle, 1e-12);
    close((-(0.9f64).ln() - (0.8f64).ln()) / 2.0, 0.1643, 5e-5);
}

#[test]
fn regression_and_classification_examples() {
    close(rmse(&[0.2, 0.4], &[0.2, 0.4]).unwrap(), 0.0, 0.0);
    close(rmse(&[0.0, 1.0], &[1.0, 1.0]).unwrap(), 0.5f64.sqrt(), 1e-15);
    close(rmse(&[0.3], &[0.8]).unwrap(), 0.5, 1e-15);

    let perfect = classification_scores(&[1, 0, 1], &[1, 0, 1], &1).unwrap();
    assert_eq!((perfect.accuracy, perfect.recall, perfect.precision), (1.0, Some(1.0), Some(1.0)));
    let s = classification_scores(&[1, 0, 0, 0], &[1, 1, 0, 0], &1).unwrap();
    assert_eq!((s.accuracy, s.recall, s.precision), (0.75, Some(0.5), Some(1.0)));
    let none = classification_scores(&[0, 0, 0], &[1, 0, 1], &1).unwrap();
    assert_eq!((none.recall, none.precision), (Some(0.0), None));
}
