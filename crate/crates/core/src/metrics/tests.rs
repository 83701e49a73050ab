use image::{Rgb, RgbImage};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::lpips::unit_normalize;
use super::*;
use crate::dataio::crop::tensor_to_image;
use crate::dataio::synth::{synthetic_dataset, SynthSpec};
use crate::geometry::{columbia_grid, correction_angle, GazeScale};

fn naive_blurriness(img: &RgbImage, k: [[f64; 3]; 3]) -> f64 {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let gray = |x: i64, y: i64| {
        let p = img.get_pixel(x as u32, y as u32);
        0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
    };
    let mut vals = Vec::new();
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let mut s = 0.0;
            for j in -1..=1i64 {
                for i in -1..=1i64 {
                    s += k[(j + 1) as usize][(i + 1) as usize] * gray(x + i, y + j);
                }
            }
            vals.push(s);
        }
    }
    let n = vals.len() as f64;
    let sq = vals.iter().map(|v| v * v).sum::<f64>() / n;
    let m = vals.iter().sum::<f64>() / n;
    1.0 / (sq - m * m)
}

fn random_image(w: u32, h: u32, rng: &mut impl Rng) -> RgbImage {
    RgbImage::from_fn(w, h, |_, _| Rgb([rng.gen(), rng.gen(), rng.gen()]))
}

#[test]
fn blurriness_matches_naive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for t in 0..20 {
        let img = random_image(5 + t, 4 + 2 * t, &mut rng);
        for kern in [LaplacianKernel::Standard, LaplacianKernel::Corner] {
            let got = blurriness(&img, kern).unwrap();
            let want = naive_blurriness(&img, kern.weights());
            assert!(((got - want) / want).abs() < 1e-9, "{got} vs {want}");
        }
    }
}

#[test]
fn checkerboard_blurriness_is_one_sixteenth() {
    let data = (0..64).map(|i| ((i / 8 + i % 8) % 2) as f64).collect();
    let img = GrayImage::new(8, 8, data).unwrap();
    assert!((blurriness_gray(&img, LaplacianKernel::Standard).unwrap() - 0.0625).abs() < 1e-12);
    let rgb = RgbImage::from_fn(8, 8, |x, y| {
        let v = ((x + y) % 2) as u8;
        Rgb([v, v, v])
    });
    assert!((blurriness(&rgb, LaplacianKernel::Standard).unwrap() - 0.0625).abs() < 1e-9);
}

#[test]
fn constant_and_tiny_images_are_degenerate() {
    let flat = RgbImage::from_pixel(10, 10, Rgb([90, 40, 200]));
    assert!(matches!(blurriness(&flat, LaplacianKernel::Standard), Err(Error::DegenerateInput(_))));
    let tiny = RgbImage::new(2, 9);
    assert!(matches!(blurriness(&tiny, LaplacianKernel::Standard), Err(Error::DegenerateInput(_))));
}

#[test]
fn blurring_a_patch_raises_blurriness() {
    let data = synthetic_dataset(&SynthSpec::columbia(1, 3), &GazeScale::default()).unwrap();
    for s in data.samples.iter().step_by(7) {
        let img = tensor_to_image(&s.image).unwrap();
        let soft = image::imageops::blur(&img, 1.5);
        let k = LaplacianKernel::Standard;
        assert!(blurriness(&soft, k).unwrap() > blurriness(&img, k).unwrap());
        let from_t = blurriness_tensor(&s.image, k).unwrap();
        assert!(from_t.is_finite() && from_t > 0.0);
    }
}

#[test]
fn kernels_differ_and_parse() {
    assert_eq!("corner".parse::<LaplacianKernel>().unwrap(), LaplacianKernel::Corner);
    assert_eq!(" Standard ".parse::<LaplacianKernel>().unwrap(), LaplacianKernel::Standard);
    assert!("sobel".parse::<LaplacianKernel>().is_err());
    let sum: f64 = LaplacianKernel::Corner.weights().iter().flatten().sum();
    assert_eq!(sum, 1.0);
    let img = random_image(9, 9, &mut ChaCha8Rng::seed_from_u64(2));
    assert_ne!(
        blurriness(&img, LaplacianKernel::Corner).unwrap(),
        blurriness(&img, LaplacianKernel::Standard).unwrap()
    );
}

#[test]
fn lpips_toy_case_matches_hand_value() {
    let model = LpipsModel::unit(Box::new(IdentityFeatures { channels: 2 }));
    let a = Tensor::from_vec(vec![1, 2, 1, 1], vec![3.0, 4.0]);
    let b = Tensor::from_vec(vec![1, 2, 1, 1], vec![1.0, 0.0]);
    let d = model.distances(&a, &b).unwrap()[0];
    let (na, nb) = (5.0 + lpips::UNIT_EPS, 1.0 + lpips::UNIT_EPS);
    let want = (3.0 / na - 1.0 / nb).powi(2) + (4.0 / na).powi(2);
    assert!((d - want).abs() < 1e-12);
    assert!((d - 0.8).abs() < 1e-9);
    let weighted = LpipsModel::new(Box::new(IdentityFeatures { channels: 2 }), vec![vec![2.0, 1.0]], "toy")
        .unwrap()
        .distances(&a, &b)
        .unwrap()[0];
    assert!((weighted - (4.0 * 0.16 + 0.64)).abs() < 1e-9);
}

#[test]
fn lpips_rejects_bad_models_and_shapes() {
    assert!(matches!(
        LpipsModel::new(Box::new(IdentityFeatures { channels: 3 }), vec![vec![1.0; 2]], "x"),
        Err(Error::Config(_))
    ));
    assert!(matches!(
        LpipsModel::new(Box::new(IdentityFeatures { channels: 1 }), vec![vec![-1.0]], "x"),
        Err(Error::Config(_))
    ));
    let m = LpipsModel::identity();
    assert!(lpips(&Tensor::zeros(&[3, 4, 4]), &Tensor::zeros(&[3, 4, 5]), &m).is_err());
}

#[test]
fn unit_normalization_gives_unit_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = Tensor::randn(&[2, 5, 3, 4], 1.0, &mut rng);
    let u = unit_normalize(&a);
    for i in 0..2 {
        for pos in 0..12 {
            let norm: f64 = (0..5).map(|c| u.data()[i * 60 + c * 12 + pos].powi(2)).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn lpips_is_a_symmetric_non_negative_premetric_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let models = [
        LpipsModel::unit(Box::new(AlexFeatures::random(4, 5))),
        LpipsModel::unit(Box::new(crate::models::PerceptualBackbone::random(16, 6))),
    ];
    for (mi, model) in models.iter().enumerate() {
        let pairs = if mi == 0 { 1000 } else { 100 };
        let chunk = 50;
        for _ in 0..pairs / chunk {
            let x = Tensor::rand_uniform(&[chunk, 3, 64, 64], -1.0, 1.0, &mut rng);
            let y = Tensor::rand_uniform(&[chunk, 3, 64, 64], -1.0, 1.0, &mut rng);
            let xy = model.distances(&x, &y).unwrap();
            let yx = model.distances(&y, &x).unwrap();
            let xx = model.distances(&x, &x).unwrap();
            for k in 0..chunk {
                assert!(xy[k] >= 0.0 && xy[k].is_finite());
                assert!((xy[k] - yx[k]).abs() <= 1e-12 * xy[k].max(1.0));
                assert_eq!(xx[k], 0.0);
            }
        }
    }
}

#[test]
fn alexnet_taps_have_expected_shapes() {
    let a = AlexFeatures::random(8, 0);
    let f = a.features(&Tensor::zeros(&[1, 3, 64, 64])).unwrap();
    let shapes: Vec<_> = f.iter().map(|t| t.shape().to_vec()).collect();
    assert_eq!(
        shapes,
        vec![vec![1, 8, 15, 15], vec![1, 24, 7, 7], vec![1, 48, 3, 3], vec![1, 32, 3, 3], vec![1, 32, 3, 3]]
    );
}

#[test]
fn gaze_error_oracles() {
    let target = GazeDirection::new(15.0, 10.0);
    let x = Tensor::zeros(&[1, 3, 64, 64]);
    assert_eq!(gaze_redirection_error(&x, target, &ConstantEstimator(target)).unwrap(), 0.0);
    let e = gaze_redirection_error(&x, target, &ConstantEstimator(GazeDirection::new(0.0, 0.0))).unwrap();
    assert!((e - 17.963860129831353).abs() < 1e-9);
}

#[test]
fn bins_partition_the_grid_angles() {
    let bins = CorrectionBins::default();
    assert_eq!(bins.len(), 3);
    assert_eq!(bins.bin_of(5.0), 0);
    assert_eq!(bins.bin_of(15.0), 0);
    assert_eq!(bins.bin_of(15.0001), 1);
    assert_eq!(bins.bin_of(25.0), 1);
    assert_eq!(bins.bin_of(35.93), 2);
    assert_eq!(bins.bin_of(1.0), 0);
    assert_eq!(bins.label(0), "[4.9, 15]");
    assert_eq!(bins.label(2), "(25, 35.9]");
    assert_eq!("4.9,15,25,35.9".parse::<CorrectionBins>().unwrap(), bins);
    assert!("1,1".parse::<CorrectionBins>().is_err());
    assert!("a,b".parse::<CorrectionBins>().is_err());
    let grid = columbia_grid();
    let mut counts = [0usize; 3];
    for a in &grid {
        for b in &grid {
            if a != b {
                counts[bins.bin_of(correction_angle(*a, *b).unwrap())] += 1;
            }
        }
    }
    assert_eq!(counts.iter().sum::<usize>(), 21 * 20);
    assert!(counts.iter().all(|&c| c > 0));
}

proptest! {
    #[test]
    fn every_angle_lands_in_exactly_one_bin(g in 0.0f64..40.0) {
        let bins = CorrectionBins::default();
        let k = bins.bin_of(g);
        prop_assert!(k < 3);
        if g > 4.9 && g <= 35.9 {
            prop_assert!(g > bins.edges[k] && g <= bins.edges[k + 1]);
        }
    }
}

fn test_subjects(n: u32) -> Dataset {
    synthetic_dataset(&SynthSpec::columbia(n, 8), &GazeScale::default()).unwrap()
}

#[test]
fn ground_truth_against_itself_scores_zero_lpips() {
    let data = test_subjects(1);
    let lp = LpipsModel::unit(Box::new(AlexFeatures::random(8, 1)));
    let sources: Vec<usize> = (0..6).collect();
    let est = ConstantEstimator(GazeDirection::new(0.0, 0.0));
    let r = evaluate_sources(&GroundTruthRedirector, &data, &sources, &lp, &est, &EvalOptions::default()).unwrap();
    assert_eq!(r.total_pairs, 6 * 20);
    assert_eq!(r.sources, 6);
    assert_eq!(r.bins.iter().map(|b| b.n).sum::<usize>(), r.total_pairs);
    for b in &r.bins {
        assert_eq!(b.metrics["lpips"].mean, 0.0);
        assert_eq!(b.metrics["mse"].mean, 0.0);
    }
    for p in &r.pairs {
        let gamma = correction_angle(p.d_g, p.d_r).unwrap();
        assert_eq!(p.gamma, gamma);
        assert_eq!(p.bin, r.options.bins.bin_of(gamma));
    }
    let dir = tempfile::tempdir().unwrap();
    r.write(dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert!(csv.starts_with("bin,metric,mean,std,n\n"));
    assert_eq!(csv.lines().count(), 1 + 4 * 4);
    assert!(dir.path().join("curve_lpips.csv").exists());
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(json["total_pairs"], 120);
    assert!(r.render_table().lines().count() == 5);
}

#[test]
fn identity_redirector_has_positive_distance_and_order_free_bins() {
    let data = test_subjects(1);
    let lp = LpipsModel::identity();
    let est = ConstantEstimator(GazeDirection::new(0.0, 0.0));
    let fwd: Vec<usize> = (0..10).collect();
    let rev: Vec<usize> = fwd.iter().rev().copied().collect();
    let a = evaluate_sources(&IdentityRedirector, &data, &fwd, &lp, &est, &EvalOptions::default()).unwrap();
    let b = evaluate_sources(&IdentityRedirector, &data, &rev, &lp, &est, &EvalOptions::default()).unwrap();
    assert!(a.overall["lpips"].mean > 0.0);
    let counts = |r: &EvaluationReport| r.bins.iter().map(|b| b.n).collect::<Vec<_>>();
    assert_eq!(counts(&a), counts(&b));
    assert!(evaluate_sources(&IdentityRedirector, &data, &[], &lp, &est, &EvalOptions::default()).is_err());
}

#[test]
fn missing_ground_truth_is_counted_and_skipped() {
    let data = test_subjects(1);
    let sparse = data.subset(|r, _| !(r.yaw == 15.0 && r.pitch == 10.0) || r.eye_side == crate::dataio::EyeSide::Right);
    let est = ConstantEstimator(GazeDirection::new(0.0, 0.0));
    let r = evaluate_sources(&GroundTruthRedirector, &sparse, &[0], &LpipsModel::identity(), &est, &EvalOptions::default())
        .unwrap();
    assert_eq!(r.total_pairs, 19);
    assert_eq!(r.missing_ground_truth, 1);
}
