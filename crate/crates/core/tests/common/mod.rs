//! Independent reference implementations used by the integration tests.
//! Nothing here calls into the library's numerical kernels.

#![allow(dead_code, clippy::needless_range_loop)]

use plainusr::{ConvParams, Tensor4};

/// Direct six-nested-loop convolution in f64 (zero padding, groups = 1).
pub fn naive_conv2d(x: &Tensor4<f64>, p: &ConvParams<f64>) -> Tensor4<f64> {
    let xs = x.shape();
    let ks = p.kernel().shape();
    assert_eq!(p.groups(), 1);
    let (stride, pad) = (p.stride() as isize, p.padding() as isize);
    let oh = ((xs.h as isize + 2 * pad - ks.h as isize) / stride + 1) as usize;
    let ow = ((xs.w as isize + 2 * pad - ks.w as isize) / stride + 1) as usize;
    Tensor4::from_fn([xs.n, ks.n, oh, ow], |[n, o, y, xx]| {
        let mut acc = 0.0;
        for i in 0..ks.c {
            for a in 0..ks.h {
                for b in 0..ks.w {
                    let iy = y as isize * stride + a as isize - pad;
                    let ix = xx as isize * stride + b as isize - pad;
                    if iy >= 0 && ix >= 0 && (iy as usize) < xs.h && (ix as usize) < xs.w {
                        acc += p.kernel().at(o, i, a, b) * x.at(n, i, iy as usize, ix as usize);
                    }
                }
            }
        }
        acc + p.bias()[o]
    })
}

/// Softmax-weighted window sums written out literally, without the
/// max-shift used by the library.
pub fn naive_softpool(x: &Tensor4<f64>, k: usize, stride: usize) -> Tensor4<f64> {
    let s = x.shape();
    let (oh, ow) = ((s.h - k) / stride + 1, (s.w - k) / stride + 1);
    Tensor4::from_fn([s.n, s.c, oh, ow], |[n, c, y, xx]| {
        let window: Vec<f64> = (0..k)
            .flat_map(|a| (0..k).map(move |b| (a, b)))
            .map(|(a, b)| x.at(n, c, y * stride + a, xx * stride + b))
            .collect();
        let denom: f64 = window.iter().map(|v| v.exp()).sum();
        window.iter().map(|&v| v * v.exp() / denom).sum()
    })
}

/// Importance map as a weighted sum over neighbourhoods of softmax-pooled
/// regions: softpool, then the squeeze conv, then the one-channel conv,
/// each evaluated with direct loops.
pub fn naive_importance(
    x: &Tensor4<f64>,
    a: &ConvParams<f64>,
    b: &ConvParams<f64>,
    k: usize,
    stride: usize,
) -> Tensor4<f64> {
    let pooled = naive_softpool(x, k, stride);
    naive_conv2d(&naive_conv2d(&pooled, a), b)
}

/// SSIM with every window evaluated as an explicit 2-D weighted sum.
pub fn direct_ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let r = 5isize;
    let mut g = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (i, row) in g.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut sum = 0.0;
    let mut count = 0;
    for cy in r..h as isize - r {
        for cx in r..w as isize - r {
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let idx = ((cy - r + i as isize) as usize) * w + (cx - r + j as isize) as usize;
                    let wgt = g[i][j] / total;
                    ma += wgt * a[idx];
                    mb += wgt * b[idx];
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let idx = ((cy - r + i as isize) as usize) * w + (cx - r + j as isize) as usize;
                    let wgt = g[i][j] / total;
                    va += wgt * (a[idx] - ma) * (a[idx] - ma);
                    vb += wgt * (b[idx] - mb) * (b[idx] - mb);
                    cov += wgt * (a[idx] - ma) * (b[idx] - mb);
                }
            }
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    sum / count as f64
}
