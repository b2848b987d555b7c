mod common;

use common::{numeric_gradient, relative_error};
use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use signtune_core::model::nn::text_features;
use signtune_core::model::{normalize_rows, EncoderConfig, Net};
use signtune_core::training::{
    contrastive_forward_backward, contrastive_gradients, contrastive_loss, cross_entropy_gradients,
    fft_forward_backward, fft_loss, lp_forward_backward, lp_loss,
};
use signtune_core::weights::{ParameterSet, Tensor};

const H: f64 = 1e-6;
const TOL: f64 = 1e-4;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

fn reshape(v: &[f64], like: ArrayView2<f64>) -> Array2<f64> {
    Array2::from_shape_vec(like.raw_dim(), v.to_vec()).unwrap()
}

#[test]
fn contrastive_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let n = rng.random_range(2..=8);
        let d = rng.random_range(2..=16);
        let images = normalize_rows(random_matrix(&mut rng, n, d).view()).unwrap();
        let texts = normalize_rows(random_matrix(&mut rng, n, d).view()).unwrap();
        let scale = rng.random_range(0.5..20.0);
        let g = contrastive_forward_backward(images.view(), texts.view(), scale);
        assert!((g.loss - contrastive_loss(images.view(), texts.view(), scale).unwrap()).abs() < 1e-12);

        let num = numeric_gradient(images.as_slice().unwrap(), H, |x| {
            contrastive_forward_backward(reshape(x, images.view()).view(), texts.view(), scale).loss
        });
        assert!(relative_error(g.d_images.as_slice().unwrap(), &num) < TOL);
        let num = numeric_gradient(texts.as_slice().unwrap(), H, |x| {
            contrastive_forward_backward(images.view(), reshape(x, texts.view()).view(), scale).loss
        });
        assert!(relative_error(g.d_texts.as_slice().unwrap(), &num) < TOL);
        let num = numeric_gradient(&[scale], H, |s| contrastive_forward_backward(images.view(), texts.view(), s[0]).loss);
        assert!(relative_error(&[g.d_scale], &num) < TOL);
    }
}

#[test]
fn lp_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let n = rng.random_range(1..=8);
        let d = rng.random_range(2..=16);
        let c = rng.random_range(2..=6);
        let features = random_matrix(&mut rng, n, d);
        let weights = random_matrix(&mut rng, c, d) * 3.0;
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let g = lp_forward_backward(features.view(), &labels, weights.view());
        assert!((g.loss - lp_loss(features.view(), &labels, weights.view()).unwrap()).abs() < 1e-12);

        let num = numeric_gradient(features.as_slice().unwrap(), H, |x| {
            lp_forward_backward(reshape(x, features.view()).view(), &labels, weights.view()).loss
        });
        assert!(relative_error(g.d_features.as_slice().unwrap(), &num) < TOL);
        let num = numeric_gradient(weights.as_slice().unwrap(), H, |x| {
            lp_forward_backward(features.view(), &labels, reshape(x, weights.view()).view()).loss
        });
        assert!(relative_error(g.d_weights.as_slice().unwrap(), &num) < TOL);
    }
}

#[test]
fn fft_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let n = rng.random_range(1..=8);
        let d = rng.random_range(2..=16);
        let c = rng.random_range(2..=6);
        let p = rng.random_range(1..=12);
        let features = random_matrix(&mut rng, n, d);
        let weights = random_matrix(&mut rng, c, d);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let theta: Array1<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let theta0: Array1<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lambda = rng.random_range(0.0..2.0);
        let g = fft_forward_backward(features.view(), &labels, weights.view(), &theta, &theta0, lambda);

        let num = numeric_gradient(theta.as_slice().unwrap(), H, |x| {
            fft_forward_backward(features.view(), &labels, weights.view(), &Array1::from(x.to_vec()), &theta0, lambda).loss
        });
        assert!(relative_error(g.d_theta.as_slice().unwrap(), &num) < TOL);
        let num = numeric_gradient(weights.as_slice().unwrap(), H, |x| {
            fft_forward_backward(features.view(), &labels, reshape(x, weights.view()).view(), &theta, &theta0, lambda).loss
        });
        assert!(relative_error(g.d_weights.as_slice().unwrap(), &num) < TOL);
        let num = numeric_gradient(features.as_slice().unwrap(), H, |x| {
            fft_forward_backward(reshape(x, features.view()).view(), &labels, weights.view(), &theta, &theta0, lambda).loss
        });
        assert!(relative_error(g.d_features.as_slice().unwrap(), &num) < TOL);
    }
}

#[test]
fn fft_parameter_set_form_agrees_with_flat_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let features = random_matrix(&mut rng, 4, 3);
    let weights = random_matrix(&mut rng, 2, 3);
    let labels = [0, 1, 1, 0];
    let a: Vec<f32> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
    let b: Vec<f32> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
    let theta = ParameterSet::new().with("p", Tensor::new(vec![5], a.clone()).unwrap()).unwrap();
    let theta0 = ParameterSet::new().with("p", Tensor::new(vec![5], b.clone()).unwrap()).unwrap();
    let flat = fft_forward_backward(
        features.view(),
        &labels,
        weights.view(),
        &a.iter().map(|&v| v as f64).collect(),
        &b.iter().map(|&v| v as f64).collect(),
        0.7,
    );
    let set = fft_loss(features.view(), &labels, weights.view(), &theta, &theta0, 0.7).unwrap();
    assert!((flat.loss - set).abs() < 1e-12);
    let misaligned = ParameterSet::new().with("q", Tensor::new(vec![5], b).unwrap()).unwrap();
    assert!(fft_loss(features.view(), &labels, weights.view(), &theta, &misaligned, 0.7).is_err());
}

fn tiny_net(seed: u64) -> Net {
    let cfg = EncoderConfig {
        image_side: 2,
        hidden: 5,
        embed_dim: 4,
        vocab_buckets: 16,
        n_classes: 3,
    };
    let mut net = Net::init(&cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    net.head.mapv_inplace(|_| rng.random_range(-2.0..2.0));
    for (_, s) in net.slices_mut() {
        for v in s.iter_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    net
}

/// Checks every parameter array of `net` against finite differences of `loss`.
fn check_network(net: &Net, analytic: &mut Net, loss: impl Fn(&Net) -> f64) {
    let mut work = net.clone();
    let n_arrays = work.slices_mut().len();
    let analytic_slices: Vec<Vec<f64>> = analytic.slices_mut().into_iter().map(|(_, s)| s.to_vec()).collect();
    for k in 0..n_arrays {
        let base: Vec<f64> = work.slices_mut()[k].1.to_vec();
        let num = numeric_gradient(&base, H, |x| {
            let mut probe = net.clone();
            probe.slices_mut()[k].1.copy_from_slice(x);
            loss(&probe)
        });
        let err = relative_error(&analytic_slices[k], &num);
        assert!(err < TOL, "array {k}: relative error {err}");
    }
}

#[test]
fn contrastive_backprop_through_encoders() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..5 {
        let net = tiny_net(seed);
        let n = rng.random_range(2..=6);
        let pixels = random_matrix(&mut rng, n, 12) * 0.5;
        let texts: Vec<String> = (0..n).map(|i| format!("sign {i} word{}", i % 3)).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let captions = text_features(&refs, 16);
        let (_, mut grads) = contrastive_gradients(&net, pixels.view(), captions.view()).unwrap();
        check_network(&net, &mut grads, |probe| {
            contrastive_gradients(probe, pixels.view(), captions.view()).unwrap().0
        });
    }
}

#[test]
fn cross_entropy_backprop_through_image_encoder() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for seed in 0..5 {
        let net = tiny_net(seed);
        let n = rng.random_range(1..=6);
        let pixels = random_matrix(&mut rng, n, 12) * 0.5;
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let (_, mut grads) = cross_entropy_gradients(&net, pixels.view(), &labels, true).unwrap();
        check_network(&net, &mut grads, |probe| {
            cross_entropy_gradients(probe, pixels.view(), &labels, true).unwrap().0
        });
        let (_, frozen) = cross_entropy_gradients(&net, pixels.view(), &labels, false).unwrap();
        assert!(frozen.image.w1.iter().all(|&v| v == 0.0));
        assert_eq!(frozen.head, grads.head);
    }
}
