mod common;

use plainusr::init::ParamRng;
use plainusr::lia::{self, LiaGeometry};
use plainusr::metrics::{ssim, ImageMode};
use plainusr::ops::{self, Window};
use plainusr::reparam::{self, RepGeometry};
use plainusr::{ConvParams, Init, RepMBConvParams, Tensor4};

fn random_conv(rng: &mut ParamRng, c_out: usize, c_in: usize, k: usize, stride: usize, pad: usize) -> ConvParams<f64> {
    let kernel = rng.uniform_tensor([c_out, c_in, k, k], -1.0, 1.0);
    let bias = rng.uniform_vec(c_out, -1.0, 1.0);
    ConvParams::new(kernel, bias, stride, pad, 1).unwrap()
}

#[test]
fn conv_matches_nested_loops() {
    let mut rng = ParamRng::new(1);
    for &(c_in, c_out, k, stride, pad, h, w) in &[
        (1, 1, 3, 1, 1, 5, 5),
        (3, 8, 3, 1, 1, 17, 9),
        (8, 2, 3, 2, 1, 16, 15),
        (4, 4, 1, 1, 0, 7, 7),
        (5, 3, 5, 1, 2, 11, 13),
        (2, 6, 3, 1, 0, 6, 4),
    ] {
        let p = random_conv(&mut rng, c_out, c_in, k, stride, pad);
        let x: Tensor4<f64> = rng.uniform_tensor([2, c_in, h, w], -1.0, 1.0);
        let want = common::naive_conv2d(&x, &p);
        let got = ops::conv2d(&x, &p).unwrap();
        assert_eq!(got.shape(), want.shape());
        assert!(got.max_abs_diff(&want).unwrap() <= 1e-12);

        let got32 = ops::conv2d(&x.cast::<f32>(), &p.cast::<f32>()).unwrap();
        assert!(got32.cast::<f64>().max_abs_diff(&want).unwrap() <= 1e-5 * (c_in * k * k) as f64);
    }
}

#[test]
fn softpool_matches_literal_window_softmax() {
    let mut rng = ParamRng::new(2);
    let x: Tensor4<f64> = rng.uniform_tensor([1, 5, 9, 12], -4.0, 4.0);
    let got = ops::softpool2d(&x, Window::square(2, 2)).unwrap();
    let want = common::naive_softpool(&x, 2, 2);
    assert_eq!(got.shape().dims(), [1, 5, 4, 6]);
    assert!(got.max_abs_diff(&want).unwrap() <= 1e-12);
}

#[test]
fn importance_matches_literal_sum_in_f32() {
    let g = LiaGeometry {
        channels: 12,
        squeeze: 4,
        kernel: 3,
        pool_kernel: 2,
        pool_stride: 2,
        conv_stride: 2,
    };
    let mut rng = ParamRng::new(3);
    let p = lia::LiaParams::<f64>::init(g, &mut rng);
    let x: Tensor4<f64> = rng.uniform_tensor([2, 12, 14, 10], -2.0, 2.0);
    let want = common::naive_importance(&x, &p.conv_a, &p.conv_b, 2, 2);
    let got = lia::local_importance(&x.cast::<f32>(), &p.cast::<f32>()).unwrap();
    assert!(got.cast::<f64>().max_abs_diff(&want).unwrap() <= 1e-5);
}

#[test]
fn ssim_matches_direct_windows() {
    let mut rng = ParamRng::new(4);
    for _ in 0..3 {
        let a: Tensor4<f64> = rng.uniform_tensor([1, 1, 32, 32], 0.0, 1.0);
        let b: Tensor4<f64> = rng.uniform_tensor([1, 1, 32, 32], 0.0, 1.0);
        let want = common::direct_ssim_plane(a.data(), b.data(), 32, 32);
        let got = ssim(&a, &b, ImageMode::Rgb).unwrap();
        assert!((got - want).abs() <= 1e-6, "{got} vs {want}");
    }
}

#[test]
fn fusion_stages_match_composed_convolutions() {
    let mut rng = ParamRng::new(5);
    let k1 = random_conv(&mut rng, 6, 3, 1, 1, 0);
    let k2 = random_conv(&mut rng, 6, 6, 3, 1, 0);
    let x: Tensor4<f64> = rng.uniform_tensor([1, 3, 8, 8], -1.0, 1.0);
    let padded = ops::pad_zero(&x, 1);
    let want = common::naive_conv2d(&common::naive_conv2d(&padded, &k1), &k2);
    let merged = reparam::merge_pointwise_into_kxk(&k1, &k2).unwrap();
    let got = ops::conv2d_padded(&x, &merged, 1).unwrap();
    assert!(got.max_abs_diff(&want).unwrap() <= 1e-12);

    let k3 = random_conv(&mut rng, 4, 6, 1, 1, 0);
    let k2p = random_conv(&mut rng, 6, 3, 3, 1, 1);
    let want = common::naive_conv2d(&common::naive_conv2d(&x, &k2p), &k3);
    let merged = reparam::merge_kxk_into_pointwise(&k2p, &k3).unwrap();
    assert!(common::naive_conv2d(&x, &merged).max_abs_diff(&want).unwrap() <= 1e-12);
}

#[test]
fn fused_block_matches_oracle_convolution() {
    let mut rng = ParamRng::new(6);
    let g = RepGeometry {
        channels: 8,
        expansion: 2,
        kernel: 3,
        se_reduction: 4,
        identity_branch: true,
    };
    let p = RepMBConvParams::<f64>::init(g, &mut rng, Init::Random);
    let x: Tensor4<f64> = rng.uniform_tensor([2, 8, 10, 7], 0.0, 1.0);
    let fused = reparam::fuse(&p).unwrap();
    let want = reparam::forward_train(&x, &p).unwrap();
    assert!(common::naive_conv2d(&x, &fused).max_abs_diff(&want).unwrap() <= 1e-12);
}

#[test]
fn gelu_is_exact_erf_form() {
    for &(v, want) in &[
        (0.0, 0.0),
        (1.0, 0.841_344_746_068_543),
        (-1.0, -0.158_655_253_931_457),
        (3.0, 2.995_950_305_905_11),
    ] {
        assert!((ops::gelu_scalar::<f64>(v) - want).abs() < 1e-12, "gelu({v})");
    }
}
