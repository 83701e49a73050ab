use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autograd::check::{numeric_grad, relative_error};
use crate::autograd::{backward, Var};
use crate::tensor::ConvGeom;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn toy_batch(n: usize, seed: u64) -> Tensor {
    Tensor::rand_uniform(&[n, 3, 4, 4], -1.0, 1.0, &mut rng(seed))
}

/// Checks the autodiff gradient of `f` at `x` against central differences.
fn fd_error(f: impl Fn(&Var) -> Var, x: &Tensor) -> f64 {
    let leaf = Var::leaf(x.clone(), true);
    let analytic = backward(&f(&leaf), &[&leaf]).remove(0);
    let numeric = numeric_grad(|t| f(&Var::constant(t.clone())).item(), x, 1e-5);
    relative_error(&analytic, &numeric, 1e-8)
}

/// Small nonlinear critic on 4×4 inputs with a scalar per sample.
struct ToyCritic {
    w1: Tensor,
    w2: Tensor,
}

impl ToyCritic {
    fn new(seed: u64) -> Self {
        let mut r = rng(seed);
        Self {
            w1: Tensor::randn(&[2, 3, 3, 3], 0.5, &mut r),
            w2: Tensor::randn(&[1, 2, 4, 4], 0.5, &mut r),
        }
    }

    fn score(w1: &Var, w2: &Var, x: &Var) -> Var {
        let n = x.shape()[0];
        x.conv2d(w1, ConvGeom::new(1, 1))
            .leaky_relu(0.2)
            .conv2d(w2, ConvGeom::new(1, 0))
            .reshape(&[n])
    }

    fn critic(&self) -> impl Fn(&Var) -> Var + '_ {
        move |x| Self::score(&Var::constant(self.w1.clone()), &Var::constant(self.w2.clone()), x)
    }
}

/// Five same-resolution taps of tanh(conv) for 4×4 inputs.
struct ToyTaps {
    weights: Vec<Tensor>,
}

impl ToyTaps {
    fn new(seed: u64) -> Self {
        let mut r = rng(seed);
        let chans = [3, 4, 3, 4, 2, 3];
        Self {
            weights: (0..5)
                .map(|i| Tensor::randn(&[chans[i + 1], chans[i], 3, 3], 0.4, &mut r))
                .collect(),
        }
    }
}

impl FeatureTaps for ToyTaps {
    fn taps(&self, x: &Var, upto: usize) -> Vec<Var> {
        let mut y = x.clone();
        let mut out = Vec::new();
        for w in self.weights.iter().take(upto) {
            y = y.conv2d(&Var::constant(w.clone()), ConvGeom::new(1, 1)).tanh();
            out.push(y.clone());
        }
        out
    }
}

fn first_pixel(x: &Var) -> Var {
    let n = x.shape()[0];
    let inner = x.value().numel() / n;
    x.reshape(&[n, inner]).narrow(1, 0, 1).reshape(&[n])
}

#[test]
fn penalty_is_zero_for_a_unit_gradient_critic() {
    let (a, b) = (toy_batch(3, 1), toy_batch(3, 2));
    let gp = gradient_penalty(&first_pixel, &a, &b, &penalty_weights(3, 0)).unwrap();
    assert!(gp.item().abs() < 1e-6);
}

#[test]
fn penalty_is_one_for_a_constant_critic() {
    let (a, b) = (toy_batch(2, 1), toy_batch(2, 2));
    let constant = |x: &Var| Var::constant(Tensor::zeros(&[x.shape()[0]]));
    let gp = gradient_penalty(&constant, &a, &b, &penalty_weights(2, 0)).unwrap();
    assert!((gp.item() - 1.0).abs() < 1e-6);
}

#[test]
fn penalty_matches_closed_form_for_scaled_sum() {
    let (a, b) = (toy_batch(2, 1), toy_batch(2, 2));
    let d = 48.0_f64;
    let critic = |x: &Var| x.sum_per_sample().scale(2.0);
    let gp = gradient_penalty(&critic, &a, &b, &penalty_weights(2, 9)).unwrap();
    let expected = (2.0 * d.sqrt() - 1.0).powi(2);
    assert!((gp.item() - expected).abs() < 1e-9 * expected);
}

#[test]
fn penalty_rejects_mismatched_batches() {
    let w = penalty_weights(2, 0);
    assert!(gradient_penalty(&first_pixel, &toy_batch(2, 1), &toy_batch(3, 1), &w).is_err());
    assert!(gradient_penalty(&first_pixel, &toy_batch(3, 1), &toy_batch(3, 2), &w).is_err());
}

#[test]
fn penalty_weights_are_seeded_and_in_unit_interval() {
    let a = penalty_weights(16, 4);
    assert_eq!(a, penalty_weights(16, 4));
    assert_ne!(a, penalty_weights(16, 5));
    assert!(a.iter().all(|e| (0.0..1.0).contains(e)));
}

#[test]
fn penalty_gradient_wrt_critic_weights_matches_finite_differences() {
    let toy = ToyCritic::new(3);
    let (a, b) = (toy_batch(2, 4), toy_batch(2, 5));
    let eps = penalty_weights(2, 6);
    let w2 = Var::constant(toy.w2.clone());
    let gp_of = |w1: &Var| {
        let critic = |x: &Var| ToyCritic::score(w1, &w2, x);
        gradient_penalty(&critic, &a, &b, &eps).unwrap()
    };
    assert!(fd_error(gp_of, &toy.w1) < 1e-3);
}

#[test]
fn penalty_gradient_for_linear_critic_matches_closed_form() {
    // D(x) = w·Σx has ‖∇D‖ = |w|√d, so GP(w) = (|w|√d − 1)².
    let (a, b) = (toy_batch(2, 1), toy_batch(2, 2));
    let d = 48.0_f64;
    let w = Var::leaf(Tensor::scalar(0.3), true);
    let critic = |x: &Var| x.sum_per_sample().mul(&w.reshape(&[1]).broadcast_to(&[x.shape()[0]]));
    let gp = gradient_penalty(&critic, &a, &b, &penalty_weights(2, 1)).unwrap();
    let g = backward(&gp, &[&w]).remove(0).item();
    let expected = 2.0 * (0.3 * d.sqrt() - 1.0) * d.sqrt();
    assert!((g - expected).abs() < 1e-9 * expected.abs());
}

#[test]
fn wasserstein_terms_match_plug_in_values() {
    let toy = ToyCritic::new(1);
    let x = Var::constant(toy_batch(3, 2));
    assert!(critic_loss(&toy.critic(), &x, &x).unwrap().item().abs() < 1e-15);

    let mean_pixel = |x: &Var| {
        let inner = x.value().numel() / x.shape()[0];
        x.sum_per_sample().scale(1.0 / inner as f64)
    };
    let reals = Var::constant(Tensor::ones(&[2, 3, 4, 4]));
    let fakes = Var::constant(Tensor::full(&[2, 3, 4, 4], -1.0));
    assert!((critic_loss(&mean_pixel, &reals, &fakes).unwrap().item() + 2.0).abs() < 1e-12);
    assert!((generator_adv_loss(&mean_pixel, &fakes).item() - 1.0).abs() < 1e-12);
    assert!(critic_loss(&mean_pixel, &reals, &Var::constant(toy_batch(1, 0))).is_err());
}

#[test]
fn adversarial_gradients_match_finite_differences() {
    let toy = ToyCritic::new(7);
    let critic = toy.critic();
    let x_r = Var::constant(toy_batch(2, 8));
    let x_g = toy_batch(2, 9);
    assert!(fd_error(|x| critic_loss(&critic, &x_r, x).unwrap(), &x_g) < 1e-3);
    assert!(fd_error(|x| generator_adv_loss(&critic, x), &x_g) < 1e-3);
}

#[test]
fn gaze_loss_examples() {
    let zero = [NormalizedGaze::new(0.0, 0.0)];
    let est = Var::constant(Tensor::from_vec(vec![1, 2], vec![0.6, 0.8]));
    assert!((gaze_loss_d(&zero, &est).unwrap().item() - 1.0).abs() < 1e-12);
    let same = Var::constant(gaze_targets(&zero));
    assert_eq!(gaze_loss_g(&zero, &same).unwrap().item(), 0.0);

    let targets = [NormalizedGaze::new(0.0, 0.0), NormalizedGaze::new(0.0, 0.0)];
    let est = Var::constant(Tensor::from_vec(vec![2, 2], vec![0.0, 0.0, 0.6, 0.8]));
    assert!((gaze_loss_g(&targets, &est).unwrap().item() - 0.5).abs() < 1e-12);
    assert!(gaze_loss_d(&zero, &est).is_err());
}

#[test]
fn gaze_gradient_matches_finite_differences() {
    let targets = [NormalizedGaze::new(0.2, -0.4), NormalizedGaze::new(-1.0, 0.5)];
    let est = Tensor::rand_uniform(&[2, 2], -1.0, 1.0, &mut rng(3));
    assert!(fd_error(|e| gaze_loss_d(&targets, e).unwrap(), &est) < 1e-3);
}

#[test]
fn reconstruction_with_mock_generators() {
    let x = Var::constant(toy_batch(2, 1));
    let c = [NormalizedGaze::new(0.1, 0.2), NormalizedGaze::new(-0.3, 0.0)];
    let identity = |x: &Var, _: &[NormalizedGaze]| x.clone();
    assert_eq!(reconstruction_loss(&identity, &x, &c, &c).unwrap().item(), 0.0);
    let shift = |x: &Var, _: &[NormalizedGaze]| x.add_scalar(0.1);
    assert!((reconstruction_loss(&shift, &x, &c, &c).unwrap().item() - 0.2).abs() < 1e-12);
}

#[test]
fn reconstruction_gradient_matches_finite_differences() {
    let w = Tensor::randn(&[3, 3, 3, 3], 0.4, &mut rng(2));
    let gen = |x: &Var, d: &[NormalizedGaze]| {
        let shift = Tensor::from_vec(vec![x.shape()[0], 1, 1, 1], d.iter().map(|g| g.yaw_n).collect());
        let shift = Var::constant(shift).broadcast_to(x.shape());
        x.conv2d(&Var::constant(w.clone()), ConvGeom::new(1, 1)).add(&shift).tanh()
    };
    let d_r = [NormalizedGaze::new(0.5, 0.0), NormalizedGaze::new(-0.5, 0.3)];
    let d_g = [NormalizedGaze::new(-0.2, 0.1), NormalizedGaze::new(0.9, -0.3)];
    let x = toy_batch(2, 3);
    assert!(fd_error(|x| reconstruction_loss(&gen, x, &d_r, &d_g).unwrap(), &x) < 1e-3);
}

#[test]
fn gram_of_all_ones_single_channel_is_one() {
    let g = gram_matrix(&Var::constant(Tensor::ones(&[1, 1, 2, 2])));
    assert!((g.item() - 1.0).abs() < 1e-12);
}

#[test]
fn gram_of_disjoint_channels_has_zero_off_diagonal() {
    let act = Tensor::from_vec(vec![1, 2, 2, 2], vec![1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 3.0, 4.0]);
    let g = gram_matrix(&Var::constant(act));
    let d = g.value().data();
    assert_eq!(d[1], 0.0);
    assert_eq!(d[2], 0.0);
    assert!((d[0] - 5.0 / 8.0).abs() < 1e-12);
    assert!((d[3] - 25.0 / 8.0).abs() < 1e-12);
}

#[test]
fn gram_matches_brute_force_triple_loop() {
    let (c, h, w) = (4, 3, 3);
    let act = Tensor::rand_uniform(&[2, c, h, w], -2.0, 2.0, &mut rng(5));
    let g = gram_matrix(&Var::constant(act.clone()));
    let a = act.data();
    for n in 0..2 {
        for i in 0..c {
            for j in 0..c {
                let mut s = 0.0;
                for y in 0..h {
                    for x in 0..w {
                        let at = |ch: usize| a[((n * c + ch) * h + y) * w + x];
                        s += at(i) * at(j);
                    }
                }
                let brute = s / (c * h * w) as f64;
                assert!((g.value().data()[(n * c + i) * c + j] - brute).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn gram_is_symmetric_positive_semidefinite() {
    let mut r = rng(8);
    for _ in 0..50 {
        let act = Tensor::rand_uniform(&[1, 6, 3, 2], -1.0, 1.0, &mut r);
        let g = gram_matrix(&Var::constant(act));
        let m = nalgebra::DMatrix::from_row_slice(6, 6, g.value().data());
        assert!((&m - m.transpose()).abs().max() < 1e-15);
        let min = m.symmetric_eigen().eigenvalues.min();
        assert!(min >= -1e-8, "min eigenvalue {min}");
    }
}

#[test]
fn perceptual_terms_vanish_on_identical_inputs() {
    let taps = ToyTaps::new(1);
    let x = Var::constant(toy_batch(2, 2));
    let (c, s) = perceptual_loss(&taps, &x, &x).unwrap();
    assert_eq!(c.item(), 0.0);
    assert_eq!(s.item(), 0.0);
    let vgg = PerceptualBackbone::random(16, 3);
    let x = Var::constant(Tensor::rand_uniform(&[1, 3, 16, 16], -1.0, 1.0, &mut rng(4)));
    let (c, s) = perceptual_loss(&vgg, &x, &x).unwrap();
    assert!(c.item().abs() < 1e-6 && s.item().abs() < 1e-6);
}

#[test]
fn style_ignores_spatial_permutation() {
    let mut r = rng(9);
    let a: Vec<Var> = (0..4)
        .map(|_| Var::constant(Tensor::rand_uniform(&[2, 3, 2, 3], -1.0, 1.0, &mut r)))
        .collect();
    let b: Vec<Var> = (0..4)
        .map(|_| Var::constant(Tensor::rand_uniform(&[2, 3, 2, 3], -1.0, 1.0, &mut r)))
        .collect();
    // Same permutation of the six positions applied to every channel.
    let perm = [4, 0, 5, 2, 1, 3];
    let permute = |v: &Var| {
        let src = v.value().data();
        let mut out = vec![0.0; src.len()];
        for plane in 0..src.len() / 6 {
            for (dst, &from) in perm.iter().enumerate() {
                out[plane * 6 + dst] = src[plane * 6 + from];
            }
        }
        Var::constant(Tensor::from_vec(v.shape().to_vec(), out))
    };
    let pa: Vec<Var> = a.iter().map(permute).collect();
    let pb: Vec<Var> = b.iter().map(permute).collect();
    let base = style_from_taps(&a, &b).item();
    assert!(base > 0.0);
    assert!((style_from_taps(&pa, &pb).item() - base).abs() < 1e-12);
}

#[test]
fn content_and_style_gradients_match_finite_differences() {
    let taps = ToyTaps::new(11);
    let x_t = Var::constant(toy_batch(2, 12));
    let x_g = toy_batch(2, 13);
    assert!(fd_error(|x| content_loss(&taps, x, &x_t).unwrap(), &x_g) < 1e-3);
    assert!(fd_error(|x| style_loss(&taps, x, &x_t).unwrap(), &x_g) < 1e-3);
}

#[test]
fn perceptual_gradient_through_vgg_matches_finite_differences() {
    let vgg = PerceptualBackbone::random(16, 21);
    let x_t = Var::constant(Tensor::rand_uniform(&[1, 3, 16, 16], -1.0, 1.0, &mut rng(22)));
    let x_g = Tensor::rand_uniform(&[1, 3, 16, 16], -1.0, 1.0, &mut rng(23));
    let total = |x: &Var| {
        let (c, s) = perceptual_loss(&vgg, x, &x_t).unwrap();
        c.add(&s)
    };
    assert!(fd_error(total, &x_g) < 1e-3);
}

#[test]
fn perceptual_rejects_short_extractors() {
    struct Two;
    impl FeatureTaps for Two {
        fn taps(&self, x: &Var, _: usize) -> Vec<Var> {
            vec![x.clone(), x.clone()]
        }
    }
    let x = Var::constant(toy_batch(1, 0));
    assert!(matches!(content_loss(&Two, &x, &x), Err(Error::Config(_))));
}

fn report_terms(seed: u64) -> (GeneratorTerms, DiscriminatorTerms) {
    let mut r = rng(seed);
    let mut s = || Var::constant(Tensor::scalar(r.gen_range(0.0..2.0)));
    (
        GeneratorTerms {
            adv_g: s(),
            content: s(),
            style: s(),
            gaze_g: s(),
            rec: s(),
        },
        DiscriminatorTerms {
            adv_d: s(),
            gp: s(),
            gaze_d: s(),
        },
    )
}

#[test]
fn report_recomposes_with_default_weights() {
    let w = LossWeights::default();
    assert_eq!((w.lambda_gp, w.lambda_p, w.lambda_gaze, w.lambda_rec), (10.0, 100.0, 5.0, 50.0));
    let (g, d) = report_terms(1);
    let mut report = LossReport::default();
    g.fill(&mut report, &g.total(&w));
    d.fill(&mut report, &d.total(&w));
    assert!((report.generator_total(&w) - report.total_g).abs() < 1e-6);
    assert!((report.discriminator_total(&w) - report.total_d).abs() < 1e-6);
}

#[test]
fn zero_weights_leave_the_adversarial_term() {
    let w = LossWeights {
        lambda_gp: 0.0,
        lambda_p: 0.0,
        lambda_gaze: 0.0,
        lambda_rec: 0.0,
    };
    let (g, d) = report_terms(2);
    assert_eq!(g.total(&w).item(), g.adv_g.item());
    assert_eq!(d.total(&w).item(), d.adv_d.item());
}

#[test]
fn zeroing_perceptual_drops_total_by_its_weighted_value() {
    let w = LossWeights::default();
    let (g, _) = report_terms(3);
    let full = g.total(&w).item();
    let lp = g.content.item() + g.style.item();
    let zeroed = GeneratorTerms {
        content: Var::scalar(0.0),
        style: Var::scalar(0.0),
        ..g
    };
    assert!((full - zeroed.total(&w).item() - w.lambda_p * lp).abs() < 1e-9);
}

#[test]
fn negative_weights_are_rejected() {
    let w = LossWeights {
        lambda_rec: -1.0,
        ..LossWeights::default()
    };
    assert!(matches!(w.validate(), Err(Error::Config(_))));
    assert!(LossWeights::default().validate().is_ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nonnegative_losses_are_nonnegative_and_finite(seed in any::<u64>()) {
        let a = Var::constant(toy_batch(2, seed));
        let b = Var::constant(toy_batch(2, seed.wrapping_add(1)));
        let taps = ToyTaps::new(seed);
        let l1 = l1_loss(&a, &b).unwrap().item();
        let (c, s) = perceptual_loss(&taps, &a, &b).unwrap();
        let est = Tensor::rand_uniform(&[2, 2], -1.0, 1.0, &mut rng(seed));
        let gz = gaze_loss_d(&[NormalizedGaze::new(0.1, 0.2), NormalizedGaze::new(0.3, -0.9)], &Var::constant(est)).unwrap();
        let gp = gradient_penalty(&ToyCritic::new(seed).critic(), a.value(), b.value(), &penalty_weights(2, seed)).unwrap();
        for v in [l1, c.item(), s.item(), gz.item(), gp.item()] {
            prop_assert!(v.is_finite() && v >= 0.0);
        }
    }
}
